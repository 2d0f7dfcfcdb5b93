"""
Classical morphological densification of sparse depth.

Every morphological conflict is resolved toward the nearer surface. Internally
missing pixels are +inf ("infinitely far"), so taking the nearest valid
neighbour is a grey-level erosion and the second half of a closing is a
grey-level dilation. Values are moved around, never re-computed, which keeps
the fill exact.
"""
import cv2
import numpy as np

from depthcomp.models.rasters import MISSING, DepthMap
from depthcomp.models.schemas import FillParams
from depthcomp.utils.errors import ConfigurationError, UnfillableInputError
from depthcomp.utils.logger import app_logger


def make_kernel(shape: str, size: int) -> np.ndarray:
    """Structuring element: full square, diamond (L1 ball) or cross."""
    r = size // 2
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    if shape == "full":
        kernel = np.ones((size, size), dtype=bool)
    elif shape == "diamond":
        kernel = np.abs(yy) + np.abs(xx) <= r
    elif shape == "cross":
        kernel = (yy == 0) | (xx == 0)
    else:
        raise ConfigurationError(f"unknown kernel shape: {shape}")
    return kernel.astype(np.uint8)


def _to_far(values: np.ndarray) -> np.ndarray:
    return np.where(values != MISSING, values, np.inf)


def _from_far(far: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(far), far, MISSING).astype(far.dtype)


def _nearest_fill(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Missing pixels take the minimum valid depth under the kernel."""
    far = _to_far(values)
    nearest = cv2.erode(far, kernel, borderType=cv2.BORDER_CONSTANT, borderValue=np.inf)
    return np.where(values != MISSING, values, _from_far(nearest))


def dilate_nearest(depth: DepthMap, kernel: np.ndarray) -> DepthMap:
    """
    Fill each missing pixel with the minimum valid depth in its kernel neighbourhood.

    Valid pixels are left unchanged; pixels with no valid neighbour stay missing.
    """
    kernel = np.asarray(kernel, dtype=np.uint8)
    if kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ConfigurationError(f"kernel must be odd-sized, got {kernel.shape}")
    return depth.with_values(_nearest_fill(depth.values, kernel))


def _close_holes(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """
    Closing restricted to the missing pixels.

    Nearest-depth spreading followed by farthest-depth shrinking; a hole is
    filled only where valid depth surrounds it within the kernel.
    """
    far = _to_far(values)
    spread = cv2.erode(far, kernel, borderType=cv2.BORDER_CONSTANT, borderValue=np.inf)
    closed = cv2.dilate(spread, kernel, borderType=cv2.BORDER_CONSTANT, borderValue=-np.inf)
    return np.where(values != MISSING, values, _from_far(closed))


def _nearest_along_rows(values: np.ndarray) -> np.ndarray:
    """Fill missing pixels from the nearest valid pixel in the same row (nearer depth on ties)."""
    h, w = values.shape
    valid = values != MISSING
    cols = np.broadcast_to(np.arange(w), (h, w))

    left_idx = np.maximum.accumulate(np.where(valid, cols, -1), axis=1)
    right_idx = np.minimum.accumulate(np.where(valid, cols, w)[:, ::-1], axis=1)[:, ::-1]

    rows = np.arange(h)[:, None]
    has_left = left_idx >= 0
    has_right = right_idx < w
    left_val = np.where(has_left, values[rows, np.clip(left_idx, 0, w - 1)], np.inf)
    right_val = np.where(has_right, values[rows, np.clip(right_idx, 0, w - 1)], np.inf)
    left_dist = np.where(has_left, cols - left_idx, np.iinfo(np.int64).max)
    right_dist = np.where(has_right, right_idx - cols, np.iinfo(np.int64).max)

    take_left = (left_dist < right_dist) | ((left_dist == right_dist) & (left_val <= right_val))
    nearest = np.where(take_left, left_val, right_val)
    return np.where(valid, values, _from_far(nearest.astype(values.dtype)))


def _extend(values: np.ndarray) -> np.ndarray:
    """Rows first; rows that held nothing are then filled down columns."""
    values = _nearest_along_rows(values)
    if (values == MISSING).any():
        values = _nearest_along_rows(values.T).T
    return values


def morph_fill(depth: DepthMap, params: FillParams = FillParams()) -> DepthMap:
    """
    Densify a sparse depth map so no holes remain.

    Sequence: initial nearest dilation, closing, repeated large-kernel nearest
    dilation until dense or the iteration cap, nearest-row extension, Gaussian
    blur of the filled pixels, copy-back of the raw measurements.

    Args:
        depth: Sparse depth map with at least one valid pixel
        params: Kernel sizes and blur settings

    Returns:
        Dense depth map; input-valid pixels are bit-exact copies

    Raises:
        UnfillableInputError: If the input has no valid pixel
    """
    original = depth.values
    valid = original != MISSING
    if not valid.any():
        raise UnfillableInputError("unfillable input: the depth map has no valid pixel")
    if valid.all():
        return depth

    values = _nearest_fill(original, make_kernel(params.dilation_kernel_shape, params.dilation_kernel_size))
    values = _close_holes(values, make_kernel("full", params.closing_kernel_size))

    hole_kernel = make_kernel("full", params.hole_kernel_size)
    for _ in range(params.hole_iterations):
        if (values != MISSING).all():
            break
        values = _nearest_fill(values, hole_kernel)

    if params.extend_rows and (values == MISSING).any():
        values = _extend(values)
    if (values == MISSING).any():
        raise UnfillableInputError(
            f"unfillable input: {int((values == MISSING).sum())} pixels remain empty; "
            "enable extend_rows or raise hole_iterations"
        )

    k = params.blur_kernel_size
    blurred = cv2.GaussianBlur(values, (k, k), params.blur_sigma, borderType=cv2.BORDER_REFLECT_101)
    lo, hi = original[valid].min(), original[valid].max()
    blurred = np.clip(blurred, lo, hi)
    filled = np.where(valid, original, blurred).astype(original.dtype)

    app_logger.debug(
        f"morph_fill: density {valid.mean():.4f} -> 1.0 ({int((~valid).sum())} pixels filled)"
    )
    return depth.with_values(filled)


def normalize_depth(depth: DepthMap) -> np.ndarray:
    """
    Scale a dense depth map into (0, 1] by the dataset max depth.

    Raises:
        ConfigurationError: If max_depth <= 0
    """
    if depth.max_depth <= 0:
        raise ConfigurationError(f"max_depth must be > 0, got {depth.max_depth}")
    return (depth.values / np.asarray(depth.max_depth, dtype=depth.values.dtype)).astype(depth.values.dtype)


def denormalize_depth(unit: np.ndarray, max_depth: float) -> DepthMap:
    """Inverse of normalize_depth."""
    if max_depth <= 0:
        raise ConfigurationError(f"max_depth must be > 0, got {max_depth}")
    unit = np.asarray(unit)
    values = unit * np.asarray(max_depth, dtype=unit.dtype)
    return DepthMap(np.minimum(values, max_depth).astype(unit.dtype), max_depth)
