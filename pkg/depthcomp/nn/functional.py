"""
Differentiable operators for the completion network.

Convolutions are evaluated as windowed tensor contractions (im2col through
sliding_window_view) with fixed reduction order, so forward passes are
deterministic for identical inputs.
"""
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from depthcomp.nn.tensor import Tensor, as_tensor, make_result
from depthcomp.utils.errors import ShapeError


def _pair_out(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, C, Ho, Wo, kh, kw) strided view of every receptive field."""
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    kh, kw = w.shape[2:]
    win = _windows(_pad(x, padding), kh, kw, stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_weight_grad(g: np.ndarray, x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    win = _windows(_pad(x, padding), kh, kw, stride)
    ho, wo = g.shape[2:]
    win = win[:, :, :ho, :wo]
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


def _conv_input_grad(g: np.ndarray, w: np.ndarray, stride: int, padding: int,
                     x_shape: Tuple[int, int, int, int]) -> np.ndarray:
    """Adjoint of _conv_forward with respect to its input (col2im)."""
    n, c, h, wd = x_shape
    kh, kw = w.shape[2:]
    ho, wo = g.shape[2:]
    cols = np.tensordot(g, w, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
    gxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return gxp[:, :, padding:padding + h, padding:padding + wd]


def _check_conv(x: Tensor, weight: Tensor, in_axis: int, stride: int, padding: int, op: str) -> None:
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"{op}: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    if weight.shape[in_axis] != x.shape[1]:
        raise ShapeError(
            f"{op}: input has {x.shape[1]} channels but weight expects {weight.shape[in_axis]}"
        )
    if stride < 1:
        raise ShapeError(f"{op}: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"{op}: padding must be >= 0, got {padding}")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation with zero padding.

    Args:
        x: (N, C, H, W)
        weight: (O, C, kh, kw)
        bias: (O,) or None
        stride: Step between receptive fields
        padding: Zero padding on every side

    Returns:
        (N, O, floor((H + 2p - kh) / s) + 1, floor((W + 2p - kw) / s) + 1)
    """
    _check_conv(x, weight, 1, stride, padding, "conv2d")
    kh, kw = weight.shape[2:]
    ho = _pair_out(x.shape[2], kh, stride, padding)
    wo = _pair_out(x.shape[3], kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit input {x.shape[2:]} with padding {padding}")

    out = _conv_forward(x.data, weight.data, stride, padding)
    inputs = [x, weight]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        inputs.append(bias)

    def backward_fn(g):
        grads = [
            _conv_input_grad(g, weight.data, stride, padding, x.shape) if x.requires_grad else None,
            _conv_weight_grad(g, x.data, kh, kw, stride, padding) if weight.requires_grad else None,
        ]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_result(out, inputs, backward_fn, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """
    Transposed convolution, the adjoint of conv2d sharing the same weight.

    Args:
        x: (N, Cin, H, W)
        weight: (Cin, Cout, kh, kw)

    Returns:
        (N, Cout, (H - 1) s - 2p + kh, (W - 1) s - 2p + kw)
    """
    _check_conv(x, weight, 0, stride, padding, "conv_transpose2d")
    n, _, h, w = x.shape
    cout, kh, kw = weight.shape[1:]
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv_transpose2d: output size {ho}x{wo} is empty")

    out = _conv_input_grad(x.data, weight.data, stride, padding, (n, cout, ho, wo))
    inputs = [x, weight]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        inputs.append(bias)

    def backward_fn(g):
        grads = [
            _conv_forward(g, weight.data, stride, padding) if x.requires_grad else None,
            _conv_weight_grad(x.data, g, kh, kw, stride, padding) if weight.requires_grad else None,
        ]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_result(np.ascontiguousarray(out), inputs, backward_fn, "conv_transpose2d")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, epsilon: float = 1e-5) -> Tensor:
    """
    Per-channel normalisation over (N, H, W).

    In training mode batch statistics are used and the running statistics
    are updated in place: running = (1 - momentum) running + momentum batch,
    with the unbiased variance feeding running_var. Eval mode uses the
    running statistics.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm: expected 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma/beta must have length {c}")
    count = x.shape[0] * x.shape[2] * x.shape[3]
    if count == 0:
        raise ShapeError("batch_norm: empty reduction set")

    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * count / (count - 1) if count > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + epsilon)
    x_hat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * x_hat + beta.data[None, :, None, None]

    def backward_fn(g):
        g_gamma = (g * x_hat).sum(axis=axes)
        g_beta = g.sum(axis=axes)
        g_hat = g * gamma.data[None, :, None, None]
        if training:
            g_x = (inv_std[None, :, None, None] / count) * (
                count * g_hat
                - g_hat.sum(axis=axes)[None, :, None, None]
                - x_hat * (g_hat * x_hat).sum(axis=axes)[None, :, None, None]
            )
        else:
            g_x = g_hat * inv_std[None, :, None, None]
        return g_x, g_gamma, g_beta

    return make_result(out, (x, gamma, beta), backward_fn, "batch_norm")


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return make_result(np.where(active, x.data, 0), (x,), lambda g: (g * active,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    """
    Logistic function, clamped to the open unit interval of the working precision.

    The clamp keeps the output strictly inside (0, 1) where the float type
    would otherwise round to an endpoint.
    """
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    dtype = np.result_type(x.dtype, np.float32)
    s = np.clip(s, np.finfo(dtype).tiny, np.nextafter(dtype.type(1), dtype.type(0)))
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ShapeError(f"unknown activation: {kind}")


def pool(x: Tensor, kind: str, window: int, stride: Optional[int] = None) -> Tensor:
    """
    Windowed max or average reduction without padding.

    Max pooling routes the gradient to the first maximum in row-major order;
    average pooling spreads it uniformly over the window.
    """
    stride = stride or window
    if x.ndim != 4:
        raise ShapeError(f"pool: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if window < 1 or window > h or window > w:
        raise ShapeError(f"pool: window {window} exceeds input {h}x{w}")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    win = _windows(x.data, window, window, stride)

    if kind == "max":
        flat = win.reshape(n, c, ho, wo, window * window)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        di, dj = np.divmod(arg, window)

        def backward_fn(g):
            gx = np.zeros_like(x.data)
            rows = np.arange(ho)[None, None, :, None] * stride + di
            cols = np.arange(wo)[None, None, None, :] * stride + dj
            nn = np.broadcast_to(np.arange(n)[:, None, None, None], rows.shape)
            cc = np.broadcast_to(np.arange(c)[None, :, None, None], rows.shape)
            np.add.at(gx, (nn, cc, rows, cols), g)
            return (gx,)

    elif kind == "avg":
        out = win.mean(axis=(-2, -1))
        scale = 1.0 / (window * window)

        def backward_fn(g):
            gx = np.zeros_like(x.data)
            spread = g * scale
            for i in range(window):
                for j in range(window):
                    gx[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += spread
            return (gx,)

    else:
        raise ShapeError(f"unknown pool kind: {kind}")

    return make_result(np.ascontiguousarray(out), (x,), backward_fn, f"{kind}_pool")


def interpolation_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Corner-aligned linear interpolation weights, shape (n_out, n_in)."""
    if n_out == 1:
        src = np.zeros(1)
    else:
        src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(dtype)


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize with corner-aligned sampling; exact on constants and axis-aligned ramps."""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"upsample: target size must be >= 1, got {out_h}x{out_w}")
    if x.ndim != 4:
        raise ShapeError(f"upsample: expected 4-D input, got {x.shape}")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return x
    ay = interpolation_matrix(h, out_h, x.dtype)
    ax = interpolation_matrix(w, out_w, x.dtype)
    out = np.matmul(np.matmul(ay, x.data), ax.T)
    return make_result(
        out, (x,),
        lambda g: (np.matmul(ay.T, np.matmul(g, ax)),),
        "upsample_bilinear",
    )


def concat_channels(*xs: Tensor) -> Tensor:
    """Stack along the channel axis in argument order."""
    if not xs:
        raise ShapeError("concat_channels needs at least one input")
    xs = tuple(as_tensor(x) for x in xs)
    if len(xs) == 1:
        return xs[0]
    n, _, h, w = xs[0].shape
    for t in xs[1:]:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(f"concat_channels: {t.shape} does not match {xs[0].shape} outside channels")
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def backward_fn(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return make_result(np.concatenate([t.data for t in xs], axis=1), xs, backward_fn, "concat")


def pad_edge(x: np.ndarray, pad_h: int, pad_w: int) -> np.ndarray:
    """Replicate the bottom/right border of a constant NCHW input."""
    if pad_h == 0 and pad_w == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)), mode="edge")
