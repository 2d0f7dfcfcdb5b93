"""
Bit-exact readers and writers for depth/color rasters, plus manifest ingestion.

Depth PNGs follow the KITTI devkit convention: single-channel 16-bit,
stored value / 256 = metres, 0 = no measurement.
"""
import os
from pathlib import Path
from typing import List, Optional, Tuple, Union

import cv2
import numpy as np
from pydantic import ValidationError

from depthcomp.models.rasters import DepthMap, IntensityImage, ValidMask
from depthcomp.models.schemas import DatasetManifest, SampleRecord
from depthcomp.utils.errors import FormatError, ManifestError, RangeError
from depthcomp.utils.logger import app_logger

PathLike = Union[str, Path]

DEPTH_SCALE = 256.0
MAX_STORED = np.iinfo(np.uint16).max
MAX_ENCODABLE_DEPTH = MAX_STORED / DEPTH_SCALE
ABSENT_FIELDS = {"", "-"}


def _imread(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"file not found: {path}")
    image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise FormatError(f"unreadable image file: {path}")
    return image


def _imwrite(path: PathLike, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), image):
        raise FormatError(f"could not write image: {path}")


def read_depth_png16(path: PathLike, max_depth: float = MAX_ENCODABLE_DEPTH) -> DepthMap:
    """
    Read a 16-bit depth PNG.

    Args:
        path: PNG file
        max_depth: Dataset depth bound attached to the map (m)

    Returns:
        Depth map in metres (float32), missing pixels 0.0

    Raises:
        FormatError: If the file is missing, not 16-bit, or not single-channel
    """
    stored = _imread(path)
    if stored.ndim != 2:
        channels = stored.shape[2] if stored.ndim == 3 else "unknown"
        raise FormatError(f"{path}: expected a single-channel depth PNG, got {channels} channels")
    if stored.dtype != np.uint16:
        raise FormatError(f"{path}: expected 16-bit depth PNG, got {stored.dtype}")
    depth = stored.astype(np.float32) / np.float32(DEPTH_SCALE)
    if depth.max(initial=0.0) > max_depth:
        raise RangeError(f"{path}: depth {depth.max():.3f} m exceeds dataset bound {max_depth} m")
    return DepthMap(depth, max_depth)


def encode_depth(depth: DepthMap) -> np.ndarray:
    """Quantise a depth map to the stored uint16 domain (round half away from zero)."""
    values = depth.values.astype(np.float64)
    stored = np.floor(values * DEPTH_SCALE + 0.5)
    if stored.max(initial=0.0) > MAX_STORED:
        raise RangeError(
            f"depth {values.max():.4f} m exceeds the encodable range {MAX_ENCODABLE_DEPTH} m"
        )
    # a present measurement never collapses onto the missing code
    stored[(values > 0) & (stored == 0)] = 1
    return stored.astype(np.uint16)


def write_depth_png16(depth: DepthMap, path: PathLike) -> None:
    """
    Write a depth map as a 16-bit PNG.

    Raises:
        RangeError: If a depth exceeds 65535/256 m
    """
    _imwrite(path, encode_depth(depth))


def read_rgb8(path: PathLike) -> IntensityImage:
    """
    Read an 8-bit, 3-channel image (PNG/JPEG) into [0, 1] RGB.

    Raises:
        FormatError: If the file is unreadable or not 8-bit 3-channel
    """
    image = _imread(path)
    if image.dtype != np.uint8:
        raise FormatError(f"{path}: expected 8-bit color image, got {image.dtype}")
    if image.ndim != 3 or image.shape[2] != 3:
        channels = image.shape[2] if image.ndim == 3 else 1
        raise FormatError(f"{path}: expected 3 channels, got {channels}")
    rgb = cv2.cvtColor(image, cv2.COLOR_BGR2RGB)
    return IntensityImage(rgb.astype(np.float32) / np.float32(255.0))


def write_rgb8(image: IntensityImage, path: PathLike) -> None:
    """Write an intensity image as 8-bit RGB."""
    stored = np.floor(image.values.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    _imwrite(path, cv2.cvtColor(stored, cv2.COLOR_RGB2BGR))


def write_mask_png(mask: ValidMask, path: PathLike) -> None:
    """Write a validity mask as an 8-bit PNG (255 = valid)."""
    _imwrite(path, np.where(mask.values, 255, 0).astype(np.uint8))


def read_mask_png(path: PathLike) -> ValidMask:
    stored = _imread(path)
    if stored.ndim != 2:
        raise FormatError(f"{path}: expected a single-channel mask PNG")
    return ValidMask(stored > 0)


def _resolve(base: Path, field: str) -> Optional[Path]:
    field = field.strip()
    if field in ABSENT_FIELDS:
        return None
    path = Path(field)
    return path if path.is_absolute() else base / path


def load_manifest(path: PathLike) -> DatasetManifest:
    """
    Load a dataset manifest.

    Format: `#` comments, a header line `max_depth=<metres>`, then one record
    per line with tab-separated fields rgb, sparse depth, ground truth, right
    image. Optional fields may be omitted, empty, or `-`. Relative paths are
    resolved against the manifest's directory.

    Raises:
        ManifestError: On empty record list, bad max_depth, or a dangling mandatory path
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent

    max_depth = None
    records: List[SampleRecord] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("max_depth="):
            try:
                max_depth = float(line.split("=", 1)[1])
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: max_depth is not a number") from exc
            continue

        fields = raw.rstrip("\n").split("\t")
        if len(fields) < 2 or len(fields) > 4:
            raise ManifestError(f"{path}:{lineno}: expected 2-4 tab-separated fields, got {len(fields)}")
        fields += [""] * (4 - len(fields))
        rgb, sparse, gt, right = (_resolve(base, f) for f in fields)
        if rgb is None or sparse is None:
            raise ManifestError(f"{path}:{lineno}: rgb and sparse depth paths are mandatory")
        for mandatory in (rgb, sparse):
            if not mandatory.is_file():
                raise ManifestError(f"{path}:{lineno}: dangling path {mandatory}")
        for optional in (gt, right):
            if optional is not None and not optional.is_file():
                app_logger.warning(f"{path}:{lineno}: optional path {optional} does not exist")
        records.append(SampleRecord(
            rgb_path=rgb, sparse_depth_path=sparse, gt_depth_path=gt, right_rgb_path=right
        ))

    if max_depth is None:
        raise ManifestError(f"{path}: missing max_depth=<metres> header")
    try:
        manifest = DatasetManifest(records=records, max_depth=max_depth)
    except ValidationError as exc:
        raise ManifestError(f"{path}: {exc.errors()[0]['loc'][0]}: {exc.errors()[0]['msg']}") from exc

    app_logger.debug(f"Loaded manifest {path}: {len(records)} records, max_depth={max_depth} m")
    return manifest


def write_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    """Write a manifest readable by load_manifest; paths relative to its directory when possible."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Optional[Path]) -> str:
        if p is None:
            return "-"
        try:
            return os.path.relpath(Path(p).resolve(), base)
        except ValueError:
            return str(p)

    lines = [f"max_depth={manifest.max_depth!r}"]
    for r in manifest.records:
        lines.append("\t".join([rel(r.rgb_path), rel(r.sparse_depth_path), rel(r.gt_depth_path), rel(r.right_rgb_path)]))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def split_manifest(
    manifest: DatasetManifest, holdout_fraction: float, seed: int
) -> Tuple[DatasetManifest, Optional[DatasetManifest]]:
    """
    Split records into disjoint train / holdout manifests, keeping file order.

    Returns:
        (train, holdout); holdout is None when the fraction selects no record
    """
    n = len(manifest.records)
    n_holdout = int(np.floor(holdout_fraction * n + 0.5))
    n_holdout = min(n_holdout, n - 1)
    if n_holdout <= 0:
        return manifest, None
    rng = np.random.default_rng(seed)
    held = set(rng.choice(n, size=n_holdout, replace=False).tolist())
    train = [r for i, r in enumerate(manifest.records) if i not in held]
    holdout = [r for i, r in enumerate(manifest.records) if i in held]
    return (
        DatasetManifest(records=train, max_depth=manifest.max_depth),
        DatasetManifest(records=holdout, max_depth=manifest.max_depth),
    )
