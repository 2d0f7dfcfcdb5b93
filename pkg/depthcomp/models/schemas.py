"""
Pydantic models for parameter blocks, dataset records and reports.
"""
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class CameraIntrinsics(BaseModel):
    """Pinhole intrinsics in pixels."""
    model_config = ConfigDict(frozen=True)

    fx: float = Field(..., gt=0, description="Horizontal focal length (px)")
    fy: float = Field(..., gt=0, description="Vertical focal length (px)")
    cx: float = Field(..., description="Principal point column (px)")
    cy: float = Field(..., description="Principal point row (px)")


class StereoRig(BaseModel):
    """Rectified stereo pair geometry."""
    model_config = ConfigDict(frozen=True)

    intrinsics: CameraIntrinsics
    baseline: float = Field(..., gt=0, description="Distance between optical centres (m)")


def _check_odd(name: str, value: int) -> int:
    if value < 3 or value % 2 == 0:
        raise ValueError(f"{name} must be odd and >= 3, got {value}")
    return value


class FillParams(BaseModel):
    """
    Morphological densification parameters.

    Defaults: 5x5 diamond initial dilation, 5x5 closing, 9x9 hole dilation
    repeated at most 10 times, 5x5 Gaussian blur with sigma 1.0.
    """
    dilation_kernel_shape: Literal["full", "diamond", "cross"] = Field("diamond")
    dilation_kernel_size: int = Field(5, description="Initial dilation kernel size (px)")
    closing_kernel_size: int = Field(5, description="Closing kernel size (px)")
    hole_kernel_size: int = Field(9, description="Large-hole dilation kernel size (px)")
    hole_iterations: int = Field(10, ge=1, description="Iteration cap for large-hole dilation")
    blur_kernel_size: int = Field(5, description="Gaussian blur kernel size (px)")
    blur_sigma: float = Field(1.0, gt=0, description="Gaussian blur sigma (px)")
    extend_rows: bool = Field(True, description="Run the final nearest-row-neighbour extension")

    @field_validator("dilation_kernel_size", "closing_kernel_size", "hole_kernel_size", "blur_kernel_size")
    @classmethod
    def _odd_sizes(cls, value: int, info) -> int:
        return _check_odd(info.field_name, value)


class SgmParams(BaseModel):
    """Semi-global matching parameters (costs are Hamming units)."""
    census_window: int = Field(5, description="Census window size (px, odd)")
    max_disparity: int = Field(64, ge=1, description="Number of disparities searched (px)")
    p1: int = Field(10, gt=0, description="Penalty for a one-pixel disparity change")
    p2: int = Field(120, gt=0, description="Penalty for larger disparity changes")
    lr_tolerance: float = Field(1.0, ge=0, description="Left-right consistency tolerance (px)")

    @field_validator("census_window")
    @classmethod
    def _odd_window(cls, value: int) -> int:
        return _check_odd("census_window", value)

    @model_validator(mode="after")
    def _ordered_penalties(self):
        if self.p1 > self.p2:
            raise ValueError(f"p1 ({self.p1}) must not exceed p2 ({self.p2})")
        return self


class NetworkConfig(BaseModel):
    """Channel schedule and layout of the dual-branch completion network."""
    rgb_channels: int = Field(32, ge=1)
    residual_blocks: int = Field(4, ge=1)
    fusion_tap_block: int = Field(2, ge=1, description="Residual block whose output feeds the fusion volume (1-based)")
    depth_channels: int = Field(32, ge=1)
    depth_kernels: Tuple[int, ...] = Field((7, 5, 5), description="Kernel sizes of the depth branch convolutions")
    spp_channels: int = Field(16, ge=1, description="Channels produced per pyramid scale")
    spp_windows: Tuple[int, ...] = Field((64, 32, 16, 8), description="Pooling windows, strictly decreasing")
    fusion_channels: Tuple[int, ...] = Field((128, 96, 64))
    decoder_channels: Tuple[int, ...] = Field((64, 32, 32))
    max_depth: float = Field(85.0, gt=0, description="Output scale (m)")
    pad_inputs: bool = Field(True, description="Pad inputs to the required multiple and crop back")
    bn_momentum: float = Field(0.1, gt=0, le=1)
    bn_epsilon: float = Field(1e-5, gt=0)

    @field_validator("spp_windows")
    @classmethod
    def _decreasing_windows(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value:
            raise ValueError("spp_windows must not be empty")
        if any(w < 1 for w in value):
            raise ValueError("spp_windows must be >= 1")
        if any(a <= b for a, b in zip(value, value[1:])):
            raise ValueError(f"spp_windows must be strictly decreasing, got {list(value)}")
        return value

    @field_validator("fusion_channels", "decoder_channels", "depth_kernels")
    @classmethod
    def _positive_entries(cls, value: Tuple[int, ...], info) -> Tuple[int, ...]:
        if not value or any(v < 1 for v in value):
            raise ValueError(f"{info.field_name} entries must be >= 1")
        return value

    @field_validator("depth_kernels")
    @classmethod
    def _odd_kernels(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(k % 2 == 0 for k in value):
            raise ValueError("depth_kernels must be odd")
        return value

    @model_validator(mode="after")
    def _tap_in_range(self):
        if self.fusion_tap_block > self.residual_blocks:
            raise ValueError(
                f"fusion_tap_block {self.fusion_tap_block} exceeds residual_blocks {self.residual_blocks}"
            )
        if len(self.fusion_channels) != 3:
            raise ValueError("fusion_channels must list exactly three convolutions")
        if len(self.decoder_channels) < 2:
            raise ValueError("decoder_channels needs at least two stages")
        return self

    @property
    def input_multiple(self) -> int:
        """Input height and width must be multiples of this value."""
        # branches run at 1/2 resolution; the fusion block halves once more
        return max(2 * self.spp_windows[0], 4)

    @classmethod
    def default(cls, max_depth: float = 85.0) -> "NetworkConfig":
        return cls(max_depth=max_depth)

    @classmethod
    def tiny(cls, max_depth: float = 85.0) -> "NetworkConfig":
        """8/16-channel preset for desk-scale runs and tests."""
        return cls(
            rgb_channels=8,
            depth_channels=8,
            spp_channels=8,
            spp_windows=(16, 8, 4, 2),
            fusion_channels=(16, 16, 8),
            decoder_channels=(8, 8, 8),
            max_depth=max_depth,
        )


class LossWeights(BaseModel):
    """Weights of the combined training objective."""
    alpha: float = Field(1.0, ge=0, description="Primary (ground truth) term")
    beta: float = Field(0.01, ge=0, description="Stereo supervision term")
    gamma: float = Field(0.001, ge=0, description="Smoothness term")


class TrainConfig(BaseModel):
    """Optimisation settings."""
    learning_rate: float = Field(1e-4, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    batch_size: int = Field(2, ge=1)
    epochs: int = Field(40, ge=1)
    lr_decay_factor: float = Field(0.9, gt=0, le=1, description="Multiplier applied every lr_decay_every_epochs")
    lr_decay_every_epochs: int = Field(5, ge=1)
    seed: int = Field(0, ge=0)
    weights: LossWeights = Field(default_factory=LossWeights)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_epsilon: float = Field(1e-8, gt=0)
    l1_primary: bool = Field(False, description="Use L1 instead of L2 for the primary term")
    stereo_exclude_gt: bool = Field(False, description="Restrict the stereo term to pixels without ground truth")
    holdout_fraction: float = Field(0.0, ge=0, lt=1)
    crop_height: Optional[int] = Field(None, ge=1)
    crop_width: Optional[int] = Field(None, ge=1)
    checkpoint_dir: Path = Field(Path("checkpoints"))
    max_steps: Optional[int] = Field(None, ge=1)


class SampleRecord(BaseModel):
    """One manifest line."""
    rgb_path: Path
    sparse_depth_path: Path
    gt_depth_path: Optional[Path] = None
    right_rgb_path: Optional[Path] = None


class DatasetManifest(BaseModel):
    """Ordered sample records plus the dataset depth bound."""
    records: List[SampleRecord] = Field(..., min_length=1)
    max_depth: float = Field(..., gt=0, description="Dataset maximum depth (m)")


class MetricsReport(BaseModel):
    """Error statistics over the ground-truth-valid pixels of one or more images."""
    rmse_mm: float = Field(..., ge=0)
    mae_mm: float = Field(..., ge=0)
    irmse_per_km: float = Field(..., ge=0)
    imae_per_km: float = Field(..., ge=0)
    rel: float = Field(..., ge=0)
    delta1: float = Field(..., ge=0, le=1)
    delta2: float = Field(..., ge=0, le=1)
    delta3: float = Field(..., ge=0, le=1)
    n_valid: int = Field(..., ge=1)
    n_invertible: int = Field(..., ge=0, description="Valid pixels with a positive prediction; the inverse metrics cover only these")

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "rmse_mm": 1206.66,
                "mae_mm": 429.93,
                "irmse_per_km": 3.62,
                "imae_per_km": 1.79,
                "rel": 0.05,
                "delta1": 0.95,
                "delta2": 0.98,
                "delta3": 0.99,
                "n_valid": 18000,
                "n_invertible": 18000,
            }
        }
    )


class TensorEntry(BaseModel):
    """Location of one named array inside a checkpoint container."""
    name: str
    dtype: str
    shape: List[int]
    offset: int = Field(..., ge=0)
    nbytes: int = Field(..., ge=0)


class CheckpointHeader(BaseModel):
    """JSON header of a checkpoint container."""
    format_version: int
    network: Dict
    epoch: int = 0
    step: int = 0
    adam_t: int = 0
    rng_state: Optional[Dict] = None
    entries: List[TensorEntry] = Field(default_factory=list)
