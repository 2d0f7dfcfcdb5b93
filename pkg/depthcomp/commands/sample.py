"""
`sample`: simulate a sparser sensor by keeping a random subset of depth pixels.
"""
import argparse
from pathlib import Path

from depthcomp.commands.options import add_max_depth
from depthcomp.config import Settings
from depthcomp.services.imageio import read_depth_png16, write_depth_png16
from depthcomp.services.sample import split_points
from depthcomp.utils.logger import app_logger


def register(subparsers) -> None:
    parser = subparsers.add_parser("sample", help="keep a random subset of valid depth pixels")
    parser.add_argument("--input", type=Path, required=True, help="dense or semi-dense 16-bit depth PNG")
    parser.add_argument("--output", type=Path, required=True, help="sparse 16-bit depth PNG to write")
    amount = parser.add_mutually_exclusive_group(required=True)
    amount.add_argument("--samples", type=int, help="number of pixels to keep (pixels)")
    amount.add_argument("--fraction", type=float, help="fraction of valid pixels to keep (0-1)")
    parser.add_argument("--seed", type=int, default=0, help="sampling seed")
    parser.add_argument("--withheld-output", type=Path, default=None,
                        help="also write the valid pixels that were not kept (16-bit depth PNG)")
    add_max_depth(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace, settings: Settings) -> int:
    dense = read_depth_png16(args.input, args.max_depth_m or settings.max_depth_m)
    kept, withheld = split_points(dense, n=args.samples, fraction=args.fraction, seed=args.seed)
    write_depth_png16(kept, args.output)
    if args.withheld_output is not None:
        write_depth_png16(withheld, args.withheld_output)
    app_logger.info(f"Kept {kept.valid_count} of {dense.valid_count} points -> {args.output}")
    return 0
