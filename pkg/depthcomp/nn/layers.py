"""
Parameter containers and the layer types the network is assembled from.
"""
from collections import OrderedDict
from typing import Dict, Iterator, Optional, Tuple

import numpy as np

from depthcomp.nn import functional as F
from depthcomp.nn.tensor import Tensor, default_dtype
from depthcomp.utils.errors import IncompatibleCheckpointError


class Parameter(Tensor):
    """Trainable tensor; `name` is its dotted path inside the owning model."""

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """
    Base class tracking child modules, parameters and buffers in assignment order.
    """

    def __init__(self):
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    # -- traversal -------------------------------------------------------

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self) -> Iterator[Tuple[str, Parameter]]:
        for path, module in self.named_modules():
            for name, param in module._parameters.items():
                yield (f"{path}.{name}" if path else name), param

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for path, module in self.named_modules():
            for name, buf in module._buffers.items():
                yield (f"{path}.{name}" if path else name), buf

    def assign_names(self) -> None:
        for name, param in self.named_parameters():
            param.name = name

    # -- modes -----------------------------------------------------------

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None

    # -- state -----------------------------------------------------------

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict()
        for name, param in self.named_parameters():
            state[name] = param.data
        for name, buf in self.named_buffers():
            state[name] = buf
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """
        Copy arrays into parameters and buffers.

        Raises:
            IncompatibleCheckpointError: Naming the first missing or mismatched entry
        """
        targets = OrderedDict()
        for name, param in self.named_parameters():
            targets[name] = param
        buffers = OrderedDict(self.named_buffers())

        for name in list(targets) + list(buffers):
            if name not in state:
                if strict:
                    raise IncompatibleCheckpointError(f"checkpoint is missing parameter {name}")
                continue
            current = targets[name].data if name in targets else buffers[name]
            incoming = np.asarray(state[name])
            if incoming.shape != current.shape:
                raise IncompatibleCheckpointError(
                    f"parameter {name} has shape {incoming.shape} in checkpoint, model expects {current.shape}"
                )
        if strict:
            extra = [k for k in state if k not in targets and k not in buffers]
            if extra:
                raise IncompatibleCheckpointError(f"checkpoint has unexpected parameter {extra[0]}")

        for name, param in targets.items():
            if name in state:
                param.data = np.array(state[name], dtype=param.dtype)
        for name, buf in buffers.items():
            if name in state:
                buf[...] = state[name]

    def astype(self, dtype) -> "Module":
        """Cast every parameter and buffer in place (float64 for gradient checks)."""
        for param in self.parameters():
            param.data = param.data.astype(dtype)
            param.grad = None
        for _, module in self.named_modules():
            for name, buf in list(module._buffers.items()):
                module.register_buffer(name, buf.astype(dtype))
        return self

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def kaiming_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    std = np.sqrt(2.0 / max(fan_in, 1))
    return (rng.standard_normal(shape) * std).astype(default_dtype())


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 1, padding: Optional[int] = None, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(kaiming_normal(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 stride: int = 2, padding: int = 0, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        # each output pixel sees in_channels * (k / s)^2 inputs
        fan_in = in_channels * kernel_size * kernel_size // (stride * stride)
        self.weight = Parameter(kaiming_normal(rng, (in_channels, out_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, epsilon: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=default_dtype()))
        self.register_buffer("running_var", np.ones(channels, dtype=default_dtype()))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.epsilon,
        )
