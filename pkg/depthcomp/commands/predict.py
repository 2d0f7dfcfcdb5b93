"""
`predict`: run a trained network on one sample or a whole manifest.
"""
import argparse
from pathlib import Path

from depthcomp.commands.options import add_fill_flags, apply_fill_flags
from depthcomp.config import Settings
from depthcomp.nn.checkpoint import load_checkpoint
from depthcomp.nn.network import FusionNet, build, complete_depth
from depthcomp.services.fill import morph_fill
from depthcomp.services.imageio import load_manifest, read_depth_png16, read_rgb8, write_depth_png16
from depthcomp.utils.errors import UsageError
from depthcomp.utils.logger import app_logger


def register(subparsers) -> None:
    parser = subparsers.add_parser("predict", help="complete depth with a trained checkpoint")
    parser.add_argument("--checkpoint", type=Path, required=True, help="checkpoint written by train")
    parser.add_argument("--rgb", type=Path, default=None, help="8-bit RGB image (single sample)")
    parser.add_argument("--sparse", type=Path, default=None, help="sparse 16-bit depth PNG (single sample)")
    parser.add_argument("--output", type=Path, default=None, help="16-bit depth PNG to write (single sample)")
    parser.add_argument("--manifest", type=Path, default=None, help="dataset manifest (batch mode)")
    parser.add_argument("--output-dir", type=Path, default=None,
                        help="directory for predictions, named after the sparse inputs (batch mode)")
    add_fill_flags(parser)
    parser.set_defaults(handler=run)


def _predict_one(model: FusionNet, settings: Settings, rgb: Path, sparse: Path, output: Path) -> None:
    image = read_rgb8(rgb)
    depth = read_depth_png16(sparse, model.config.max_depth)
    prediction = complete_depth(model, image, morph_fill(depth, settings.fill))
    write_depth_png16(prediction, output)
    app_logger.debug(f"Predicted {sparse} -> {output}")


def run(args: argparse.Namespace, settings: Settings) -> int:
    single = (args.rgb, args.sparse, args.output)
    batch = (args.manifest, args.output_dir)
    if all(v is not None for v in single) == all(v is not None for v in batch):
        raise UsageError("give either --rgb --sparse --output or --manifest --output-dir")
    settings = apply_fill_flags(settings, args)

    checkpoint = load_checkpoint(args.checkpoint)
    model = build(checkpoint.network)
    checkpoint.restore(model)

    if args.manifest is None:
        _predict_one(model, settings, args.rgb, args.sparse, args.output)
        app_logger.info(f"Wrote {args.output}")
        return 0

    manifest = load_manifest(args.manifest)
    for record in manifest.records:
        _predict_one(model, settings, record.rgb_path, record.sparse_depth_path,
                     args.output_dir / record.sparse_depth_path.name)
    app_logger.info(f"Wrote {len(manifest.records)} predictions to {args.output_dir}")
    return 0
