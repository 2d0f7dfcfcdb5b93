"""
Simulated sparse sensors: uniform random subsampling of dense ground truth.
"""
from typing import Iterable, List, Optional, Tuple

import numpy as np

from depthcomp.models.rasters import MISSING, DepthMap
from depthcomp.utils.errors import InvalidInputError


def resolve_count(valid_count: int, n: Optional[int] = None, fraction: Optional[float] = None) -> int:
    """Turn a count or fraction into an exact sample count (fractions round half up)."""
    if (n is None) == (fraction is None):
        raise InvalidInputError("specify exactly one of a sample count or a fraction")
    if fraction is not None:
        if not 0.0 <= fraction <= 1.0:
            raise InvalidInputError(f"fraction must lie in [0, 1], got {fraction}")
        n = int(np.floor(fraction * valid_count + 0.5))
    if n < 0:
        raise InvalidInputError(f"sample count must be >= 0, got {n}")
    if n > valid_count:
        raise InvalidInputError(f"cannot keep {n} samples from {valid_count} valid pixels")
    return n


def _select(valid_idx: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Seeded partial Fisher-Yates: the first n entries of a uniform shuffle."""
    idx = valid_idx.copy()
    m = idx.size
    rng = np.random.default_rng(seed)
    if n == 0:
        return idx[:0]
    offsets = np.floor(rng.random(n) * (m - np.arange(n))).astype(np.int64)
    for i in range(n):
        j = i + offsets[i]
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:n]


def split_points(
    dense: DepthMap, n: Optional[int] = None, fraction: Optional[float] = None, seed: int = 0
) -> Tuple[DepthMap, DepthMap]:
    """
    Partition the valid pixels into a kept sample and the withheld remainder.

    Returns:
        (kept, withheld) depth maps; their valid sets are disjoint and cover the input's
    """
    flat = dense.values.ravel()
    valid_idx = np.flatnonzero(flat != MISSING)
    count = resolve_count(valid_idx.size, n, fraction)
    chosen = _select(valid_idx, count, seed)

    kept = np.zeros_like(flat)
    kept[chosen] = flat[chosen]
    withheld = flat.copy()
    withheld[chosen] = MISSING
    shape = dense.values.shape
    return dense.with_values(kept.reshape(shape)), dense.with_values(withheld.reshape(shape))


def sparsify(
    dense: DepthMap, n: Optional[int] = None, fraction: Optional[float] = None, seed: int = 0
) -> DepthMap:
    """
    Keep exactly n (or round(fraction * valid)) valid pixels chosen uniformly at random.

    Args:
        dense: Source depth map
        n: Number of pixels to keep
        fraction: Fraction of the valid pixels to keep, in [0, 1]
        seed: Seed; equal inputs and seeds give identical outputs

    Returns:
        Sparse map with bit-exact copies of the kept values

    Raises:
        InvalidInputError: If n exceeds the valid count or the count arguments are malformed
    """
    kept, _ = split_points(dense, n=n, fraction=fraction, seed=seed)
    return kept


def sparsity_levels(valid_count: int, counts: Iterable[int]) -> List[int]:
    """Clamp a sweep of sample counts to what the map can supply, dropping duplicates."""
    levels = []
    for c in counts:
        c = min(int(c), valid_count)
        if c >= 0 and c not in levels:
            levels.append(c)
    return levels
