"""
Depth completion metrics: RMSE/MAE in millimetres, iRMSE/iMAE in 1/km,
relative error and threshold accuracies.
"""
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from depthcomp.models.rasters import MISSING, DepthMap, IntensityImage
from depthcomp.models.schemas import FillParams, MetricsReport
from depthcomp.services.fill import morph_fill
from depthcomp.services.sample import sparsify, sparsity_levels
from depthcomp.utils.errors import InvalidInputError, ShapeError
from depthcomp.utils.logger import app_logger, format_kv

DELTA_BASE = 1.25

Raster = Union[DepthMap, np.ndarray]


def _values(x: Raster) -> np.ndarray:
    return np.asarray(x.values if isinstance(x, DepthMap) else x, dtype=np.float64)


def compute_metrics(pred: Raster, gt: Raster, min_depth: Optional[float] = None,
                    max_depth: Optional[float] = None) -> MetricsReport:
    """
    Evaluate a prediction over the valid ground-truth pixels.

    Args:
        pred: Predicted depth (m)
        gt: Ground truth depth (m); 0 marks pixels without ground truth
        min_depth: Optional lower bound of the evaluation range (m)
        max_depth: Optional upper bound of the evaluation range (m)

    Returns:
        MetricsReport; inverse metrics skip pixels where the prediction is <= 0

    Raises:
        ShapeError: If the rasters differ in shape
        InvalidInputError: If no ground-truth pixel is valid
    """
    p, g = _values(pred), _values(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")

    valid = g > MISSING
    if min_depth is not None:
        valid &= g >= min_depth
    if max_depth is not None:
        valid &= g <= max_depth
    n = int(valid.sum())
    if n == 0:
        raise InvalidInputError("no valid ground-truth pixels to evaluate")

    p, g = p[valid], g[valid]
    err = p - g
    rmse = np.sqrt(np.mean(err * err))
    mae = np.mean(np.abs(err))
    rel = np.mean(np.abs(err) / g)

    invertible = p > 0
    if invertible.any():
        inv_err = 1000.0 / p[invertible] - 1000.0 / g[invertible]
        irmse = np.sqrt(np.mean(inv_err * inv_err))
        imae = np.mean(np.abs(inv_err))
    else:
        irmse = imae = 0.0

    with np.errstate(divide="ignore"):
        ratio = np.where(invertible, np.maximum(p / g, g / np.where(invertible, p, 1.0)), np.inf)
    deltas = [float(np.mean(ratio < DELTA_BASE ** k)) for k in (1, 2, 3)]

    return MetricsReport(
        rmse_mm=float(rmse * 1000.0),
        mae_mm=float(mae * 1000.0),
        irmse_per_km=float(irmse),
        imae_per_km=float(imae),
        rel=float(rel),
        delta1=deltas[0],
        delta2=deltas[1],
        delta3=deltas[2],
        n_valid=n,
        n_invertible=int(invertible.sum()),
    )


def aggregate_metrics(reports: Sequence[MetricsReport]) -> MetricsReport:
    """
    Combine per-image reports weighting each by the pixels its metrics cover.

    Direct metrics are weighted by the valid pixel count, inverse metrics by
    the invertible count. RMSE-type metrics are pooled through their squares,
    so the result equals evaluating all valid pixels at once.
    """
    if not reports:
        raise InvalidInputError("no reports to aggregate")
    n_valid = np.array([r.n_valid for r in reports], dtype=np.float64)
    n_inv = np.array([r.n_invertible for r in reports], dtype=np.float64)

    def mean(field: str, w: np.ndarray = n_valid) -> float:
        total = w.sum()
        return float(np.dot(w, [getattr(r, field) for r in reports]) / total) if total else 0.0

    def pooled(field: str, w: np.ndarray = n_valid) -> float:
        total = w.sum()
        return float(np.sqrt(np.dot(w, [getattr(r, field) ** 2 for r in reports]) / total)) if total else 0.0

    return MetricsReport(
        rmse_mm=pooled("rmse_mm"),
        mae_mm=mean("mae_mm"),
        irmse_per_km=pooled("irmse_per_km", n_inv),
        imae_per_km=mean("imae_per_km", n_inv),
        rel=mean("rel"),
        delta1=mean("delta1"),
        delta2=mean("delta2"),
        delta3=mean("delta3"),
        n_valid=int(n_valid.sum()),
        n_invertible=int(n_inv.sum()),
    )


_ROWS: List[Tuple[str, str, str]] = [
    ("rmse_mm", "RMSE", "mm"),
    ("mae_mm", "MAE", "mm"),
    ("irmse_per_km", "iRMSE", "1/km"),
    ("imae_per_km", "iMAE", "1/km"),
    ("rel", "REL", ""),
    ("delta1", "delta<1.25", ""),
    ("delta2", "delta<1.25^2", ""),
    ("delta3", "delta<1.25^3", ""),
    ("n_valid", "valid pixels", "px"),
    ("n_invertible", "invertible px", "px"),
]


def format_report(report: MetricsReport) -> str:
    """Human-readable table."""
    lines = [f"{'metric':<14} {'value':>14}  unit", "-" * 36]
    for field, label, unit in _ROWS:
        value = getattr(report, field)
        text = f"{value:d}" if isinstance(value, int) else f"{value:.4f}"
        lines.append(f"{label:<14} {text:>14}  {unit}".rstrip())
    return "\n".join(lines)


def report_lines(report: MetricsReport) -> List[str]:
    """One key=value line per metric."""
    return [format_kv(**{field: getattr(report, field)}) for field, _, _ in _ROWS]


def error_map(pred: DepthMap, gt: DepthMap) -> DepthMap:
    """Absolute error at ground-truth-valid pixels; 0 elsewhere (and where the error is exactly 0)."""
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    valid = gt.values != MISSING
    err = np.where(valid, np.abs(pred.values.astype(np.float64) - gt.values), 0.0)
    bound = max(pred.max_depth, gt.max_depth)
    return DepthMap(np.minimum(err, bound).astype(np.float32), bound)


def sparsity_sweep(
    predict,
    samples: Iterable[Tuple[IntensityImage, DepthMap]],
    counts: Sequence[int],
    seed: int = 0,
    fill_params: FillParams = FillParams(),
) -> Dict[int, MetricsReport]:
    """
    Re-sparsify each ground truth to several sample counts, fill, predict and evaluate.

    Args:
        predict: Callable (image, filled DepthMap) -> predicted DepthMap
        samples: (image, ground truth) pairs
        counts: Sample counts to sweep; clamped to each map's valid count, and counts
            that clamp to the same level share one prediction
        seed: Sampling seed shared by every level

    Returns:
        count -> valid-pixel-weighted report over all samples
    """
    samples = list(samples)
    requested = [c for c in counts if c >= 1]
    per_count: Dict[int, List[MetricsReport]] = {c: [] for c in requested}
    for image, gt in samples:
        by_level: Dict[int, MetricsReport] = {}
        for level in sparsity_levels(gt.valid_count, requested):
            sparse = sparsify(gt, n=level, seed=seed)
            pred = predict(image, morph_fill(sparse, fill_params))
            by_level[level] = compute_metrics(pred, gt)
        for count in per_count:
            per_count[count].append(by_level[min(count, gt.valid_count)])

    results = {c: aggregate_metrics(r) for c, r in per_count.items() if r}
    for count, report in results.items():
        app_logger.info(f"sparsity sweep | {format_kv(samples=count, rmse_mm=report.rmse_mm, mae_mm=report.mae_mm)}")
    return results
