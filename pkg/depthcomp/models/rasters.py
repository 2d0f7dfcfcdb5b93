"""
Immutable raster and point-cloud value types.

Arrays are copied on construction and flagged read-only, so instances can be
shared between threads freely.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from depthcomp.utils.errors import InvalidInputError, ShapeError

MISSING = 0.0


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class DepthMap:
    """
    Single-channel metric depth raster.

    A value of 0.0 marks a missing measurement; every other value lies in
    (0, max_depth]. float32 in the pipeline, float64 for reference computations.
    """
    values: np.ndarray
    max_depth: float

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ShapeError(f"depth map must be 2-D, got shape {values.shape}")
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float32)
        if not np.isfinite(self.max_depth) or self.max_depth <= 0:
            raise InvalidInputError(f"max_depth must be finite and > 0, got {self.max_depth}")
        if not np.isfinite(values).all():
            raise InvalidInputError("depth map contains non-finite values")
        present = values != MISSING
        if (values[present] < 0).any():
            raise InvalidInputError("depth map contains negative depths")
        if (values[present] > self.max_depth).any():
            raise InvalidInputError(
                f"depth map exceeds max_depth {self.max_depth} (max {values[present].max()})"
            )
        object.__setattr__(self, "values", _frozen(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def mask(self) -> "ValidMask":
        return ValidMask(self.values != MISSING)

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.values))

    @property
    def density(self) -> float:
        return self.valid_count / self.values.size

    def with_values(self, values: np.ndarray) -> "DepthMap":
        return DepthMap(values, self.max_depth)

    @classmethod
    def empty(cls, height: int, width: int, max_depth: float, dtype=np.float32) -> "DepthMap":
        return cls(np.zeros((height, width), dtype=dtype), max_depth)


@dataclass(frozen=True)
class ValidMask:
    """Per-pixel boolean raster; True means a measurement is present."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=bool)
        if values.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def shape(self):
        return self.values.shape

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.values))

    @property
    def density(self) -> float:
        return self.count / self.values.size


@dataclass(frozen=True)
class IntensityImage:
    """Three-channel color raster, HxWx3, values in [0, 1]."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3 or values.shape[2] != 3:
            raise ShapeError(f"intensity image must be HxWx3, got shape {values.shape}")
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float32)
        if not np.isfinite(values).all():
            raise InvalidInputError("intensity image contains non-finite values")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise InvalidInputError("intensity image values must lie within [0, 1]")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def chw(self) -> np.ndarray:
        """Channel-first copy for the network."""
        return np.ascontiguousarray(self.values.transpose(2, 0, 1))


@dataclass(frozen=True)
class PointCloud:
    """3-D points (N x 3, metres, sensor frame) with an optional rigid transform to the camera frame."""
    points: np.ndarray
    rotation: Optional[np.ndarray] = None
    translation: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(points).all():
            raise InvalidInputError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", _frozen(points))
        if self.rotation is not None:
            rotation = np.asarray(self.rotation, dtype=np.float64)
            if rotation.shape != (3, 3):
                raise ShapeError(f"rotation must be 3x3, got {rotation.shape}")
            object.__setattr__(self, "rotation", _frozen(rotation))
        if self.translation is not None:
            translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
            object.__setattr__(self, "translation", _frozen(translation))

    def __len__(self) -> int:
        return self.points.shape[0]

    def to_camera_frame(self) -> "PointCloud":
        """Apply R p + t; a cloud without a transform is returned unchanged."""
        if self.rotation is None and self.translation is None:
            return self
        points = self.points
        if self.rotation is not None:
            points = points @ self.rotation.T
        if self.translation is not None:
            points = points + self.translation
        return PointCloud(points)
