"""
Semi-global matching: census transform, Hamming cost volume, 8-path
aggregation, winner-take-all and left-right consistency.

Costs and aggregated path costs are integers, so every stage is exact and
reproducible bit for bit.
"""
import hashlib
import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from depthcomp.models.rasters import MISSING, DepthMap, IntensityImage, ValidMask
from depthcomp.models.schemas import SgmParams, StereoRig
from depthcomp.services.geometry import disparity_to_depth
from depthcomp.utils.errors import ShapeError
from depthcomp.utils.logger import app_logger

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# (dy, dx) of the step from p - r to p, in summation order
DIRECTIONS: Tuple[Tuple[int, int], ...] = (
    (0, 1), (0, -1), (1, 0), (-1, 0),
    (1, 1), (1, -1), (-1, 1), (-1, -1),
)


@dataclass(frozen=True)
class CostVolume:
    """Per-pixel, per-disparity matching cost, shape (H, W, D), int64, >= 0."""
    costs: np.ndarray

    def __post_init__(self):
        costs = np.asarray(self.costs)
        if costs.ndim != 3 or costs.shape[2] < 1:
            raise ShapeError(f"cost volume must be HxWxD with D >= 1, got {costs.shape}")
        if (costs < 0).any():
            raise ShapeError("cost volume entries must be >= 0")
        object.__setattr__(self, "costs", costs.astype(np.int64, copy=False))

    @property
    def height(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.costs.shape[1]

    @property
    def dmax(self) -> int:
        return self.costs.shape[2]


def to_gray8(image: IntensityImage) -> np.ndarray:
    """Fixed-weight luma, quantised to 8 bits."""
    r, g, b = (image.values[..., c].astype(np.float64) for c in range(3))
    luma = GRAY_WEIGHTS[0] * r + GRAY_WEIGHTS[1] * g + GRAY_WEIGHTS[2] * b
    return np.clip(np.floor(luma * 255.0 + 0.5), 0, 255).astype(np.uint8)


def census_bits(window: int) -> int:
    return window * window - 1


def census_words(window: int) -> int:
    """64-bit words needed to hold one signature."""
    return -(-census_bits(window) // 64)


def census_transform(gray: np.ndarray, window: int) -> np.ndarray:
    """
    Census signature per pixel, shape (H, W, census_words(window)).

    Bit k (LSB first) lives in word k // 64 at position k % 64 and is set iff
    the k-th neighbour in row-major order, centre skipped, is strictly darker
    than the pixel. Neighbours outside the image compare as equal and leave
    their bit clear.
    """
    if window < 3 or window % 2 == 0:
        raise ShapeError(f"census window must be odd and >= 3, got {window}")
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ShapeError(f"census input must be 2-D, got {gray.shape}")
    h, w = gray.shape
    r = window // 2
    center = gray.astype(np.int32)
    padded = np.pad(center, r, mode="constant", constant_values=np.iinfo(np.int32).max)
    codes = np.zeros((h, w, census_words(window)), dtype=np.uint64)
    bit = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            neighbour = padded[r + dy:r + dy + h, r + dx:r + dx + w]
            darker = neighbour < center
            word, offset = divmod(bit, 64)
            codes[..., word] |= darker.astype(np.uint64) << np.uint64(offset)
            bit += 1
    return codes


def hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bit distance between signatures, summed over the trailing word axis."""
    return np.bitwise_count(np.bitwise_xor(a, b)).sum(axis=-1, dtype=np.int64)


def _check_pair(left: np.ndarray, right: np.ndarray) -> None:
    if left.shape != right.shape:
        raise ShapeError(f"stereo pair dimensions differ: {left.shape} vs {right.shape}")


def _cost_volume(ref: np.ndarray, other: np.ndarray, dmax: int, max_cost: int, sign: int) -> CostVolume:
    h, w = ref.shape[:2]
    costs = np.full((h, w, dmax), max_cost, dtype=np.int64)
    for d in range(dmax):
        if d >= w:
            break
        if sign < 0:
            # reference pixel x matches other pixel x - d
            costs[:, d:, d] = hamming(ref[:, d:], other[:, :w - d])
        else:
            # reference pixel x matches other pixel x + d
            costs[:, :w - d, d] = hamming(ref[:, :w - d], other[:, d:])
    return CostVolume(costs)


def build_cost_volume(left: np.ndarray, right: np.ndarray, params: SgmParams) -> CostVolume:
    """
    Left-reference cost: Hamming(census_left(x), census_right(x - d)).

    Disparities reaching past the left border cost the maximum Hamming
    distance of the census window.
    """
    _check_pair(left, right)
    window = params.census_window
    return _cost_volume(
        census_transform(left, window), census_transform(right, window),
        params.max_disparity, census_bits(window), sign=-1,
    )


def build_right_cost_volume(left: np.ndarray, right: np.ndarray, params: SgmParams) -> CostVolume:
    """Right-reference cost: Hamming(census_right(x), census_left(x + d))."""
    _check_pair(left, right)
    window = params.census_window
    return _cost_volume(
        census_transform(right, window), census_transform(left, window),
        params.max_disparity, census_bits(window), sign=1,
    )


def _path_update(cost: np.ndarray, prev: np.ndarray, p1: int, p2: int) -> np.ndarray:
    """One step of L_r(p, d) = C(p, d) + min(...) - min_k L_r(p - r, k), vectorised over pixels."""
    prev_min = prev.min(axis=1, keepdims=True)
    best = np.minimum(prev, prev_min + p2)
    best[:, 1:] = np.minimum(best[:, 1:], prev[:, :-1] + p1)
    best[:, :-1] = np.minimum(best[:, :-1], prev[:, 1:] + p1)
    return cost + best - prev_min


def aggregate_direction(volume: CostVolume, direction: Tuple[int, int], p1: int, p2: int) -> np.ndarray:
    """Path costs along one scanline direction; pixels without a predecessor start at C."""
    costs = volume.costs
    h, w, _ = costs.shape
    dy, dx = direction
    out = np.empty_like(costs)

    if dy == 0:
        xs = range(w) if dx > 0 else range(w - 1, -1, -1)
        prev = None
        for x in xs:
            out[:, x] = costs[:, x] if prev is None else _path_update(costs[:, x], prev, p1, p2)
            prev = out[:, x]
        return out

    ys = range(h) if dy > 0 else range(h - 1, -1, -1)
    prev_row = None
    for y in ys:
        row_cost = costs[y]
        if prev_row is None:
            out[y] = row_cost
        elif dx == 0:
            out[y] = _path_update(row_cost, prev_row, p1, p2)
        else:
            row = row_cost.copy()
            # predecessor of column x is column x - dx on the previous row
            if dx > 0:
                row[1:] = _path_update(row_cost[1:], prev_row[:-1], p1, p2)
            else:
                row[:-1] = _path_update(row_cost[:-1], prev_row[1:], p1, p2)
            out[y] = row
        prev_row = out[y]
    return out


def aggregate(
    volume: CostVolume, params: SgmParams, directions: Optional[Sequence[Tuple[int, int]]] = None
) -> CostVolume:
    """
    Sum of per-direction SGM path costs.

    Args:
        volume: Raw matching costs
        params: Supplies the P1/P2 penalties
        directions: Subset of DIRECTIONS to use; all eight by default

    Returns:
        Aggregated cost volume, summed in the fixed direction order
    """
    directions = DIRECTIONS if directions is None else tuple(directions)
    total = np.zeros_like(volume.costs)
    for direction in directions:
        total += aggregate_direction(volume, direction, params.p1, params.p2)
    return CostVolume(total)


def wta_disparity(volume: CostVolume) -> np.ndarray:
    """Per-pixel argmin over disparities; ties go to the smallest disparity."""
    return np.argmin(volume.costs, axis=2).astype(np.int64)


def lr_consistency(disp_left: np.ndarray, disp_right: np.ndarray, tolerance: float) -> ValidMask:
    """
    Valid where the right disparity at the reprojected column agrees within tolerance.

    A pixel whose reprojection x - d_left leaves the image is invalid.
    """
    _check_pair(disp_left, disp_right)
    h, w = disp_left.shape
    cols = np.arange(w)[None, :]
    target = cols - disp_left
    in_bounds = (target >= 0) & (target < w)
    rows = np.arange(h)[:, None]
    matched = disp_right[rows, np.clip(target, 0, w - 1)]
    agree = np.abs(disp_left.astype(np.float64) - matched) <= tolerance
    return ValidMask(in_bounds & agree)


def sgm_disparities(left_gray: np.ndarray, right_gray: np.ndarray, params: SgmParams) -> Tuple[np.ndarray, np.ndarray]:
    """Left and right disparity maps, each from its own full SGM run."""
    left_volume = aggregate(build_cost_volume(left_gray, right_gray, params), params)
    right_volume = aggregate(build_right_cost_volume(left_gray, right_gray, params), params)
    return wta_disparity(left_volume), wta_disparity(right_volume)


def sgm_stereo_depth(
    left: IntensityImage,
    right: IntensityImage,
    rig: StereoRig,
    params: SgmParams = SgmParams(),
    max_depth: Optional[float] = None,
) -> Tuple[DepthMap, ValidMask]:
    """
    Dense depth and validity mask from a rectified pair.

    Pixels failing the left-right check, with zero disparity, or deeper than
    max_depth carry the missing sentinel and a False mask entry.

    Args:
        left: Left (reference) image
        right: Right image
        rig: Focal length and baseline
        params: SGM parameters
        max_depth: Depth bound of the output; defaults to the depth at one pixel of disparity

    Returns:
        (depth map in float32, validity mask)
    """
    left_gray, right_gray = to_gray8(left), to_gray8(right)
    _check_pair(left_gray, right_gray)
    disp_left, disp_right = sgm_disparities(left_gray, right_gray, params)
    consistent = lr_consistency(disp_left, disp_right, params.lr_tolerance).values

    if max_depth is None:
        max_depth = rig.intrinsics.fx * rig.baseline
    depth = disparity_to_depth(np.where(consistent, disp_left, 0), rig)
    valid = consistent & (depth != MISSING) & (depth <= max_depth)
    depth = np.where(valid, depth, MISSING).astype(np.float32)
    # float32 rounding must not push a depth past the float64 bound
    cap = np.float32(max_depth)
    if cap > max_depth:
        cap = np.nextafter(cap, np.float32(0))
    depth = np.minimum(depth, cap)

    app_logger.debug(f"sgm: {valid.mean():.3f} of pixels passed the left-right check")
    return DepthMap(depth, max_depth), ValidMask(valid)


class StereoCache:
    """
    On-disk cache of stereo targets keyed by content hash. Safe to share
    between loader threads; the hit and miss counters are lock-guarded.

    Targets depend only on the input pair, the rig and the SGM parameters,
    so one SGM run per pair serves every training epoch.
    """

    def __init__(self, cache_dir: Path):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    @staticmethod
    def key(left: IntensityImage, right: IntensityImage, rig: StereoRig,
            params: SgmParams, max_depth: Optional[float]) -> str:
        digest = hashlib.sha256()
        for image in (left, right):
            digest.update(str(image.values.shape).encode())
            digest.update(np.ascontiguousarray(image.values).tobytes())
        meta = {"rig": rig.model_dump(), "sgm": params.model_dump(), "max_depth": max_depth}
        digest.update(json.dumps(meta, sort_keys=True).encode())
        return digest.hexdigest()

    def _paths(self, key: str) -> Tuple[Path, Path]:
        return self.cache_dir / f"{key}_depth.npy", self.cache_dir / f"{key}_mask.npy"

    def get_or_compute(
        self,
        left: IntensityImage,
        right: IntensityImage,
        rig: StereoRig,
        params: SgmParams,
        max_depth: Optional[float] = None,
    ) -> Tuple[DepthMap, ValidMask]:
        key = self.key(left, right, rig, params, max_depth)
        depth_path, mask_path = self._paths(key)
        bound = max_depth if max_depth is not None else rig.intrinsics.fx * rig.baseline

        if depth_path.exists() and mask_path.exists():
            with self._lock:
                self.hits += 1
            app_logger.debug(f"Using cached stereo target: {key[:12]}")
            return DepthMap(np.load(depth_path), bound), ValidMask(np.load(mask_path))

        with self._lock:
            self.misses += 1
        app_logger.debug(f"Computing stereo target: {key[:12]}")
        depth, mask = sgm_stereo_depth(left, right, rig, params, max_depth)
        np.save(depth_path, depth.values)
        np.save(mask_path, mask.values)
        return depth, mask
