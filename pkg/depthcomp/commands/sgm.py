"""
`sgm`: stereo depth and validity mask from a rectified pair.
"""
import argparse
from pathlib import Path

from depthcomp.commands.options import add_max_depth, add_rig_flags, add_sgm_flags, apply_sgm_flags, make_rig
from depthcomp.config import Settings
from depthcomp.services.imageio import read_rgb8, write_depth_png16, write_mask_png
from depthcomp.services.stereo import sgm_stereo_depth
from depthcomp.utils.logger import app_logger


def register(subparsers) -> None:
    parser = subparsers.add_parser("sgm", help="semi-global matching on a rectified stereo pair")
    parser.add_argument("--left", type=Path, required=True, help="left (reference) 8-bit RGB image")
    parser.add_argument("--right", type=Path, required=True, help="right 8-bit RGB image")
    add_rig_flags(parser, required=True)
    parser.add_argument("--out-depth", type=Path, required=True, help="16-bit depth PNG to write")
    parser.add_argument("--out-mask", type=Path, required=True, help="8-bit validity mask PNG to write")
    add_max_depth(parser, "depths beyond this are marked invalid (metres)")
    add_sgm_flags(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace, settings: Settings) -> int:
    settings = apply_sgm_flags(settings, args)
    left, right = read_rgb8(args.left), read_rgb8(args.right)
    rig = make_rig(args.fx_px, args.baseline_m, left.height, left.width)
    depth, mask = sgm_stereo_depth(left, right, rig, settings.sgm, args.max_depth_m or settings.max_depth_m)
    write_depth_png16(depth, args.out_depth)
    write_mask_png(mask, args.out_mask)
    app_logger.info(f"Stereo depth: {mask.density:.2%} of pixels valid -> {args.out_depth}")
    return 0
