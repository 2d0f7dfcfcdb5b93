"""
Reverse-mode differentiable tensor.

Each differentiable op records a tape node holding its inputs and a backward
closure over the activations it saved. `backward` walks the tape in reverse
topological order once, accumulating into the `.grad` buffers of leaves.

Grad mode and the working precision are thread-local, so independent graphs
can be built on different threads.
"""
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from depthcomp.utils.errors import NumericalError, ShapeError, UsageError

_local = threading.local()


def default_dtype() -> np.dtype:
    return getattr(_local, "dtype", np.dtype(np.float32))


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with (float64 for gradient checks)."""
    previous = default_dtype()
    _local.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _local.dtype = previous


@contextmanager
def no_grad():
    """Run ops without recording a tape."""
    previous = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


@dataclass
class TapeNode:
    """The op that produced a tensor, its inputs, and its backward rule."""
    op: str
    inputs: Tuple["Tensor", ...]
    backward: BackwardFn


class Tensor:
    """Dense array with an optional gradient buffer; NCHW for feature maps."""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[TapeNode] = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        op = f" op={self._node.op}" if self._node else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}{op})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("division is only defined by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=self.dtype))

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return sum_all(self) / self.size

    def abs(self) -> "Tensor":
        return abs_(self)

    def square(self) -> "Tensor":
        return mul(self, self)

    def backward(self) -> None:
        backward(self)


def as_tensor(value: Union[Tensor, np.ndarray, float]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap an op result, checking finiteness and recording the tape node when needed."""
    if not np.isfinite(data).all():
        raise NumericalError(f"non-finite values produced by {op}")
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = TapeNode(op, tuple(inputs), backward_fn)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return make_result(
        a.data + b.data, (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
        "add",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    return make_result(
        a.data * b.data, (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
        "mul",
    )


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def abs_(a: Tensor) -> Tensor:
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def sum_all(a: Tensor) -> Tensor:
    return make_result(
        np.asarray(a.data.sum(), dtype=a.dtype), (a,),
        lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),),
        "sum",
    )


def getitem(a: Tensor, index) -> Tensor:
    """Basic slicing; the gradient is scattered back into a zero array."""

    def backward_fn(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return make_result(np.array(a.data[index]), (a,), backward_fn, "getitem")


def backward(output: Tensor) -> None:
    """
    Accumulate d(output)/d(leaf) into every leaf that requires grad.

    Raises:
        UsageError: If output is not a scalar
    """
    if output.size != 1:
        raise UsageError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return

    order = []
    visited = set()
    stack = [(output, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor._node is not None:
            for parent in tensor._node.inputs:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

    grads = {id(output): np.ones_like(output.data)}
    for tensor in reversed(order):
        g = grads.pop(id(tensor), None)
        if g is None:
            continue
        node = tensor._node
        if node is None:
            if tensor.grad is None:
                tensor.grad = np.array(g, dtype=tensor.dtype)
            else:
                tensor.grad += g
            continue
        for parent, parent_grad in zip(node.inputs, node.backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + parent_grad
            else:
                grads[id(parent)] = parent_grad
