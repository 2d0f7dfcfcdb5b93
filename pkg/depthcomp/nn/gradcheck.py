"""
Central finite-difference gradient checks, run in 64-bit mode.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from depthcomp.nn.layers import Module
from depthcomp.nn.tensor import Tensor, no_grad, precision


@dataclass
class GradcheckResult:
    errors: List[float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    diff = np.linalg.norm(np.ravel(analytic - numeric))
    scale = max(np.linalg.norm(np.ravel(analytic)), np.linalg.norm(np.ravel(numeric)), floor)
    return float(diff / scale)


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], eps: float = 1e-6,
              rtol: float = 1e-3) -> GradcheckResult:
    """
    Compare backward() of a scalar function against central differences.

    Args:
        fn: Maps Tensors (one per input) to a scalar Tensor
        inputs: Arrays at which to evaluate; every one is checked
        eps: Finite-difference step
        rtol: Relative-error threshold for `passed`
    """
    with precision(np.float64):
        tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
        fn(*tensors).backward()
        errors = []
        for i, t in enumerate(tensors):
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            numeric = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            with no_grad():
                for k in range(flat.size):
                    original = flat[k]
                    flat[k] = original + eps
                    plus = fn(*tensors).item()
                    flat[k] = original - eps
                    minus = fn(*tensors).item()
                    flat[k] = original
                    numeric.reshape(-1)[k] = (plus - minus) / (2 * eps)
            errors.append(relative_error(analytic, numeric))
    return GradcheckResult(errors, rtol)


def gradcheck_parameters(loss_fn: Callable[[], Tensor], model: Module, per_parameter: int = 5,
                         rng: Optional[np.random.Generator] = None, eps: float = 1e-6,
                         rtol: float = 1e-3) -> GradcheckResult:
    """
    Spot-check parameter gradients of a whole model.

    `model` must already be cast to float64 and `loss_fn` must build its
    inputs in float64. Up to `per_parameter` entries of every parameter are
    perturbed; each parameter contributes one relative error.
    """
    rng = rng or np.random.default_rng(0)
    with precision(np.float64):
        model.zero_grad()
        loss_fn().backward()
        errors = []
        for param in model.parameters():
            flat = param.data.reshape(-1)
            picks = rng.choice(flat.size, size=min(per_parameter, flat.size), replace=False)
            analytic = (param.grad if param.grad is not None else np.zeros_like(param.data)).reshape(-1)[picks]
            numeric = np.zeros(len(picks))
            with no_grad():
                for j, k in enumerate(picks):
                    original = flat[k]
                    flat[k] = original + eps
                    plus = loss_fn().item()
                    flat[k] = original - eps
                    minus = loss_fn().item()
                    flat[k] = original
                    numeric[j] = (plus - minus) / (2 * eps)
            errors.append(relative_error(analytic, numeric))
    return GradcheckResult(errors, rtol)
