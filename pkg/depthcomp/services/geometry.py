"""
Geometry primitives: disparity/depth conversion and point-cloud projection.
"""
from typing import Optional, Union

import numpy as np

from depthcomp.models.rasters import MISSING, DepthMap, PointCloud
from depthcomp.models.schemas import CameraIntrinsics, StereoRig
from depthcomp.utils.errors import InvalidInputError

ArrayLike = Union[float, np.ndarray]


def disparity_to_depth(d: ArrayLike, rig: StereoRig) -> ArrayLike:
    """
    Convert disparity (px) to depth (m): fx * baseline / d.

    Zero disparity is infinite range and maps to the missing sentinel.

    Raises:
        InvalidInputError: If any disparity is negative
    """
    d_arr = np.asarray(d, dtype=np.float64)
    if (d_arr < 0).any():
        raise InvalidInputError("disparity must be >= 0")
    focal_baseline = rig.intrinsics.fx * rig.baseline
    with np.errstate(divide="ignore"):
        depth = np.where(d_arr > 0, focal_baseline / np.where(d_arr > 0, d_arr, 1.0), MISSING)
    if np.ndim(d) == 0:
        return float(depth)
    return depth


def depth_to_disparity(z: ArrayLike, rig: StereoRig) -> ArrayLike:
    """
    Convert depth (m) to disparity (px): fx * baseline / z.

    Raises:
        InvalidInputError: If any depth is <= 0
    """
    z_arr = np.asarray(z, dtype=np.float64)
    if (z_arr <= 0).any():
        raise InvalidInputError("depth must be > 0 to convert to disparity")
    disparity = rig.intrinsics.fx * rig.baseline / z_arr
    if np.ndim(z) == 0:
        return float(disparity)
    return disparity


def project_pointcloud(
    cloud: PointCloud,
    intr: CameraIntrinsics,
    width: int,
    height: int,
    max_depth: Optional[float] = None,
) -> DepthMap:
    """
    Render a point cloud into a sparse depth map with a z-buffer.

    Points are moved to the camera frame first (z forward). Each point with
    z > 0 lands on the nearest pixel centre; when several points hit one
    pixel the smallest z wins. Points outside the image, behind the camera
    or beyond max_depth are dropped.

    Args:
        cloud: Points, optionally with a sensor-to-camera transform
        intr: Camera intrinsics
        width: Output width (px)
        height: Output height (px)
        max_depth: Depth bound of the output map; defaults to the farthest rendered point

    Returns:
        Sparse depth map (float64)
    """
    points = cloud.to_camera_frame().points
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    in_front = z > 0
    x, y, z = x[in_front], y[in_front], z[in_front]

    u = np.floor(intr.fx * x / z + intr.cx + 0.5).astype(np.int64)
    v = np.floor(intr.fy * y / z + intr.cy + 0.5).astype(np.int64)
    keep = (u >= 0) & (u < width) & (v >= 0) & (v < height)
    if max_depth is not None:
        keep &= z <= max_depth
    u, v, z = u[keep], v[keep], z[keep]

    zbuffer = np.full((height, width), np.inf)
    np.minimum.at(zbuffer, (v, u), z)
    depth = np.where(np.isfinite(zbuffer), zbuffer, MISSING)

    if max_depth is None:
        max_depth = float(z.max()) if z.size else 1.0
    return DepthMap(depth, max_depth)
