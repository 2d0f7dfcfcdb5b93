"""
Shared fixtures: synthetic rasters, stereo pairs, small datasets on disk.
"""
from pathlib import Path

import numpy as np
import pytest

from depthcomp.models.rasters import DepthMap, IntensityImage
from depthcomp.models.schemas import CameraIntrinsics, DatasetManifest, NetworkConfig, SampleRecord, StereoRig
from depthcomp.services.imageio import write_depth_png16, write_manifest, write_rgb8

MAX_DEPTH = 85.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def rig():
    return StereoRig(intrinsics=CameraIntrinsics(fx=100.0, fy=100.0, cx=16.0, cy=8.0), baseline=0.5)


@pytest.fixture
def tiny_config():
    return NetworkConfig.tiny(max_depth=MAX_DEPTH)


def smooth_scene(height: int, width: int, seed: int = 0):
    """RGB image and a dense depth map that both vary smoothly, depth in [5, 45] m."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    a, b, c = r.uniform(0.2, 1.0, size=3)
    depth = 5.0 + 20.0 * (yy / max(height - 1, 1)) * a + 20.0 * (xx / max(width - 1, 1)) * b
    depth += 2.0 * np.sin(xx / 7.0 + c) * np.cos(yy / 5.0)
    depth = np.clip(depth, 1.0, 45.0)
    shade = (depth - depth.min()) / (np.ptp(depth) + 1e-9)
    rgb = np.stack([shade, 1.0 - shade, 0.5 * np.ones_like(shade)], axis=-1)
    return IntensityImage(rgb.astype(np.float32)), DepthMap(depth.astype(np.float32), MAX_DEPTH)


def textured_pair(height: int, width: int, shift: int, seed: int = 0):
    """
    Rectified pair with a constant disparity: left = B[:, :W], right(x) = B(x + shift)
    for a random base texture B of width W + shift.
    """
    r = np.random.default_rng(seed)
    base = r.random((height, width + shift))
    left = base[:, :width]
    right = base[:, shift:shift + width]
    return gray_image(left), gray_image(right)


def gray_image(gray: np.ndarray) -> IntensityImage:
    return IntensityImage(np.repeat(gray[..., None], 3, axis=-1).astype(np.float32))


@pytest.fixture
def scene():
    return smooth_scene(32, 48, seed=3)


@pytest.fixture
def dataset(tmp_path: Path):
    """Four 64x64 samples written as PNGs plus a manifest; ground truth is dense."""
    from depthcomp.services.sample import sparsify

    records = []
    for i in range(4):
        image, gt = smooth_scene(64, 64, seed=10 + i)
        sparse = sparsify(gt, n=200, seed=i)
        rgb_path = tmp_path / f"rgb_{i}.png"
        sparse_path = tmp_path / f"sparse_{i}.png"
        gt_path = tmp_path / f"gt_{i}.png"
        write_rgb8(image, rgb_path)
        write_depth_png16(sparse, sparse_path)
        write_depth_png16(gt, gt_path)
        records.append(SampleRecord(rgb_path=rgb_path, sparse_depth_path=sparse_path, gt_depth_path=gt_path))
    manifest = DatasetManifest(records=records, max_depth=MAX_DEPTH)
    manifest_path = tmp_path / "train.tsv"
    write_manifest(manifest, manifest_path)
    return manifest_path
