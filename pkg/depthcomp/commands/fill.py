"""
`fill`: densify a sparse depth PNG with the morphological pipeline.
"""
import argparse
from pathlib import Path

from depthcomp.commands.options import add_fill_flags, add_max_depth, apply_fill_flags
from depthcomp.config import Settings
from depthcomp.services.fill import morph_fill
from depthcomp.services.imageio import read_depth_png16, write_depth_png16
from depthcomp.utils.logger import app_logger


def register(subparsers) -> None:
    parser = subparsers.add_parser("fill", help="densify a sparse depth PNG")
    parser.add_argument("--input", type=Path, required=True, help="sparse 16-bit depth PNG")
    parser.add_argument("--output", type=Path, required=True, help="dense 16-bit depth PNG to write")
    add_max_depth(parser)
    add_fill_flags(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace, settings: Settings) -> int:
    settings = apply_fill_flags(settings, args)
    max_depth = args.max_depth_m or settings.max_depth_m
    sparse = read_depth_png16(args.input, max_depth)
    dense = morph_fill(sparse, settings.fill)
    write_depth_png16(dense, args.output)
    app_logger.info(f"Filled {args.input} ({sparse.density:.2%} valid) -> {args.output}")
    return 0
