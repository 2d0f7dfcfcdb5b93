"""
Flags shared by several subcommands and their mapping onto settings sections.
"""
import argparse

from pydantic import ValidationError

from depthcomp.config import Settings
from depthcomp.models.schemas import CameraIntrinsics, StereoRig
from depthcomp.utils.errors import ConfigurationError


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def add_max_depth(parser: argparse.ArgumentParser, help_text: str = "dataset maximum depth (metres)") -> None:
    parser.add_argument("--max-depth-m", type=float, default=None, help=help_text)


def add_fill_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("fill parameters")
    group.add_argument("--kernel-shape", choices=["full", "diamond", "cross"], default=None,
                       help="shape of the initial dilation kernel")
    group.add_argument("--dilation-kernel-px", type=int, default=None, help="initial dilation kernel size (pixels, odd)")
    group.add_argument("--closing-kernel-px", type=int, default=None, help="closing kernel size (pixels, odd)")
    group.add_argument("--hole-kernel-px", type=int, default=None, help="large-hole dilation kernel size (pixels, odd)")
    group.add_argument("--hole-iterations", type=positive_int, default=None,
                       help="iteration cap of the large-hole dilation (count)")
    group.add_argument("--blur-kernel-px", type=int, default=None, help="Gaussian blur kernel size (pixels, odd)")
    group.add_argument("--blur-sigma-px", type=float, default=None, help="Gaussian blur sigma (pixels)")
    group.add_argument("--no-extend-rows", action="store_true",
                       help="skip the final nearest-row-neighbour extension")


def apply_fill_flags(settings: Settings, args: argparse.Namespace) -> Settings:
    return settings.with_overrides(
        "fill",
        dilation_kernel_shape=args.kernel_shape,
        dilation_kernel_size=args.dilation_kernel_px,
        closing_kernel_size=args.closing_kernel_px,
        hole_kernel_size=args.hole_kernel_px,
        hole_iterations=args.hole_iterations,
        blur_kernel_size=args.blur_kernel_px,
        blur_sigma=args.blur_sigma_px,
        extend_rows=False if args.no_extend_rows else None,
    )


def add_sgm_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("semi-global matching parameters")
    group.add_argument("--census-window-px", type=int, default=None, help="census window size (pixels, odd)")
    group.add_argument("--max-disparity-px", type=positive_int, default=None, help="disparities searched (pixels)")
    group.add_argument("--p1", type=positive_int, default=None, help="penalty for a 1-pixel disparity change (Hamming units)")
    group.add_argument("--p2", type=positive_int, default=None, help="penalty for larger disparity changes (Hamming units)")
    group.add_argument("--lr-tolerance-px", type=float, default=None, help="left-right consistency tolerance (pixels)")


def apply_sgm_flags(settings: Settings, args: argparse.Namespace) -> Settings:
    return settings.with_overrides(
        "sgm",
        census_window=args.census_window_px,
        max_disparity=args.max_disparity_px,
        p1=args.p1,
        p2=args.p2,
        lr_tolerance=args.lr_tolerance_px,
    )


def add_rig_flags(parser: argparse.ArgumentParser, required: bool) -> None:
    parser.add_argument("--fx-px", type=float, required=required, default=None, help="focal length (pixels)")
    parser.add_argument("--baseline-m", type=float, required=required, default=None, help="stereo baseline (metres)")


def make_rig(fx: float, baseline: float, height: int, width: int) -> StereoRig:
    """Rig for a rectified pair; only fx and the baseline enter depth = fx * baseline / d."""
    try:
        intrinsics = CameraIntrinsics(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0)
        return StereoRig(intrinsics=intrinsics, baseline=baseline)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid stereo rig: {exc.errors()[0]['msg']}") from exc
