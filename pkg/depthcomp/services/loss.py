"""
Training objective: masked ground-truth term, stereo supervision term and
second-order smoothness term, combined as alpha * primary + beta * stereo + gamma * smooth.

All terms are means (squared errors for the L2 terms), so their scale does
not depend on image size or point density.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Union

import numpy as np

from depthcomp.models.rasters import MISSING, DepthMap, ValidMask
from depthcomp.models.schemas import LossWeights
from depthcomp.nn.tensor import Tensor
from depthcomp.utils.errors import InvalidInputError, ShapeError
from depthcomp.utils.logger import app_logger

Target = Union[np.ndarray, DepthMap, Sequence[DepthMap]]
Mask = Union[np.ndarray, ValidMask, Sequence[ValidMask]]


def _as_batch(target, shape, what: str) -> np.ndarray:
    """Stack DepthMap/ValidMask values (or take an array) and shape them like the prediction."""
    if isinstance(target, (DepthMap, ValidMask)):
        array = target.values
    elif isinstance(target, (list, tuple)):
        array = np.stack([t.values for t in target])
    else:
        array = np.asarray(target)
    if array.size != int(np.prod(shape)):
        raise ShapeError(f"{what} with shape {array.shape} does not match prediction {shape}")
    return array.reshape(shape)


def _masked_error(pred: Tensor, target: np.ndarray, mask: np.ndarray, l1: bool) -> Tensor:
    weight = mask.astype(pred.dtype)
    diff = (pred - Tensor(np.where(mask, target, 0))) * Tensor(weight)
    per_pixel = diff.abs() if l1 else diff.square()
    return per_pixel.sum() / float(mask.sum())


def primary_loss(pred: Tensor, gt: Target, l1: bool = False) -> Tensor:
    """
    Mean squared (or absolute) error over ground-truth-valid pixels.

    Raises:
        InvalidInputError: If the batch holds no valid ground-truth pixel
    """
    gt = _as_batch(gt, pred.shape, "ground truth")
    mask = gt != MISSING
    if not mask.any():
        raise InvalidInputError("primary loss needs at least one valid ground-truth pixel")
    return _masked_error(pred, gt, mask, l1)


def stereo_loss(pred: Tensor, stereo: Target, stereo_mask: Mask, exclude: Optional[Target] = None) -> Tensor:
    """
    Mean squared error against stereo depth over mask-valid pixels.

    `exclude`, when given, removes pixels where that map is valid (ground
    truth) from the set. An empty set yields 0.
    """
    stereo = _as_batch(stereo, pred.shape, "stereo depth")
    mask = _as_batch(stereo_mask, pred.shape, "stereo mask").astype(bool) & (stereo != MISSING)
    if exclude is not None:
        mask &= _as_batch(exclude, pred.shape, "exclusion map") == MISSING
    if not mask.any():
        app_logger.debug("stereo loss: empty mask, term is 0")
        return pred.sum() * 0.0
    return _masked_error(pred, stereo, mask, l1=False)


def smooth_loss(pred: Tensor) -> Tensor:
    """
    Mean over interior pixels of |d2/dx2| + |d2/dy2| using the [1, -2, 1] stencil.

    Zero on any affine plane.
    """
    if pred.ndim < 2:
        raise ShapeError(f"smooth loss needs a 2-D or batched prediction, got {pred.shape}")
    h, w = pred.shape[-2:]
    if h < 3 or w < 3:
        raise InvalidInputError(f"smooth loss needs at least 3x3 pixels, got {h}x{w}")
    lead = (slice(None),) * (pred.ndim - 2)
    centre = pred[lead + (slice(1, -1), slice(1, -1))]
    dxx = pred[lead + (slice(1, -1), slice(0, -2))] + pred[lead + (slice(1, -1), slice(2, None))] - centre * 2.0
    dyy = pred[lead + (slice(0, -2), slice(1, -1))] + pred[lead + (slice(2, None), slice(1, -1))] - centre * 2.0
    return (dxx.abs() + dyy.abs()).mean()


def combine_losses(primary, stereo, smooth, weights: LossWeights):
    """alpha * primary + beta * stereo + gamma * smooth; works on floats and Tensors."""
    return primary * weights.alpha + stereo * weights.beta + smooth * weights.gamma


@dataclass
class LossBreakdown:
    total: Tensor
    primary: float
    stereo: float
    smooth: float
    stereo_pixels: int

    def components(self) -> Dict[str, float]:
        return {
            "primary": self.primary,
            "stereo": self.stereo,
            "smooth": self.smooth,
            "stereo_px": self.stereo_pixels,
        }


def total_loss(
    pred: Tensor,
    gt: Target,
    stereo: Optional[Target] = None,
    stereo_mask: Optional[Mask] = None,
    weights: LossWeights = LossWeights(),
    l1_primary: bool = False,
    stereo_exclude_gt: bool = False,
) -> LossBreakdown:
    """
    Weighted training objective.

    The stereo term is skipped when beta is 0 or no stereo target is given;
    the smoothness term is skipped when gamma is 0.
    """
    p = primary_loss(pred, gt, l1=l1_primary)
    zero = pred.sum() * 0.0

    s, n_stereo = zero, 0
    if weights.beta > 0 and stereo is not None and stereo_mask is not None:
        exclude = gt if stereo_exclude_gt else None
        s = stereo_loss(pred, stereo, stereo_mask, exclude=exclude)
        mask = _as_batch(stereo_mask, pred.shape, "stereo mask").astype(bool)
        mask &= _as_batch(stereo, pred.shape, "stereo depth") != MISSING
        if exclude is not None:
            mask &= _as_batch(gt, pred.shape, "ground truth") == MISSING
        n_stereo = int(mask.sum())

    m = smooth_loss(pred) if weights.gamma > 0 else zero
    total = combine_losses(p, s, m, weights)
    return LossBreakdown(total=total, primary=p.item(), stereo=s.item(), smooth=m.item(), stereo_pixels=n_stereo)
