"""
`train`: fit the completion network on a dataset manifest.
"""
import argparse
from pathlib import Path

from depthcomp.commands.options import add_fill_flags, add_sgm_flags, apply_fill_flags, apply_sgm_flags, make_rig, positive_int
from depthcomp.config import Settings
from depthcomp.models.schemas import NetworkConfig
from depthcomp.nn.checkpoint import load_checkpoint
from depthcomp.nn.network import build
from depthcomp.services.imageio import load_manifest, read_rgb8
from depthcomp.services.trainer import train_loop
from depthcomp.utils.errors import ConfigurationError
from depthcomp.utils.logger import app_logger, log_metrics

PRESETS = {"default": NetworkConfig.default, "tiny": NetworkConfig.tiny}


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train the completion network")
    parser.add_argument("--manifest", type=Path, required=True, help="dataset manifest (tab-separated)")
    parser.add_argument("--preset", choices=sorted(PRESETS), default=None,
                        help="network preset; default uses the [network] config section")
    parser.add_argument("--epochs", type=positive_int, default=None, help="number of epochs (count)")
    parser.add_argument("--batch-size", type=positive_int, default=None, help="samples per step (count)")
    parser.add_argument("--learning-rate", type=float, default=None, help="initial learning rate (per step)")
    parser.add_argument("--max-steps", type=positive_int, default=None, help="stop after this many steps (count)")
    parser.add_argument("--seed", type=int, default=None, help="initialisation and shuffling seed")
    parser.add_argument("--alpha", type=float, default=None, help="weight of the ground-truth term")
    parser.add_argument("--beta", type=float, default=None, help="weight of the stereo term (0 disables stereo)")
    parser.add_argument("--gamma", type=float, default=None, help="weight of the smoothness term")
    parser.add_argument("--crop-height-px", type=positive_int, default=None, help="bottom-centre crop height (pixels)")
    parser.add_argument("--crop-width-px", type=positive_int, default=None, help="bottom-centre crop width (pixels)")
    parser.add_argument("--holdout-fraction", type=float, default=None,
                        help="fraction of records held out for per-epoch evaluation (0-1)")
    parser.add_argument("--checkpoint-dir", type=Path, default=None, help="directory for per-epoch checkpoints")
    parser.add_argument("--init-from", type=Path, default=None,
                        help="initialise parameters from this checkpoint, with a fresh optimiser")
    parser.add_argument("--resume", type=Path, default=None, help="continue the run saved in this checkpoint")
    parser.add_argument("--log-file", type=Path, default=None, help="write the key=value step log here")
    parser.add_argument("--fx-px", type=float, default=None, help="focal length for stereo targets (pixels)")
    parser.add_argument("--baseline-m", type=float, default=None, help="stereo baseline for stereo targets (metres)")
    add_fill_flags(parser)
    add_sgm_flags(parser)
    parser.set_defaults(handler=run)


def _network_config(args: argparse.Namespace, settings: Settings, max_depth: float) -> NetworkConfig:
    if args.resume is not None:
        return load_checkpoint(args.resume).network
    if args.init_from is not None:
        return load_checkpoint(args.init_from).network.model_copy(update={"max_depth": max_depth})
    if args.preset is not None:
        return PRESETS[args.preset](max_depth=max_depth)
    return settings.network.model_copy(update={"max_depth": max_depth})


def run(args: argparse.Namespace, settings: Settings) -> int:
    if args.resume is not None and args.init_from is not None:
        raise ConfigurationError("--resume and --init-from are mutually exclusive")
    settings = apply_sgm_flags(apply_fill_flags(settings, args), args)
    weights = settings.train.weights.model_copy(
        update={k: v for k, v in dict(alpha=args.alpha, beta=args.beta, gamma=args.gamma).items() if v is not None}
    )
    settings = settings.with_overrides(
        "train",
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        max_steps=args.max_steps,
        seed=args.seed,
        crop_height=args.crop_height_px,
        crop_width=args.crop_width_px,
        holdout_fraction=args.holdout_fraction,
        checkpoint_dir=args.checkpoint_dir,
        weights=weights.model_dump(),
    )
    config = settings.train

    manifest = load_manifest(args.manifest)
    model = build(_network_config(args, settings, manifest.max_depth), seed=config.seed)

    rig = None
    if args.fx_px is not None and args.baseline_m is not None:
        first = read_rgb8(manifest.records[0].rgb_path)
        rig = make_rig(args.fx_px, args.baseline_m, first.height, first.width)

    result = train_loop(
        model,
        manifest,
        config,
        fill_params=settings.fill,
        sgm_params=settings.sgm,
        rig=rig,
        cache_dir=settings.cache_dir,
        jobs=settings.jobs,
        init_from=args.init_from,
        resume_from=args.resume,
        log_path=args.log_file,
    )
    app_logger.info(
        f"Training finished: {len(result.checkpoints)} checkpoints, {result.stereo_runs} stereo runs"
    )
    if result.holdout:
        log_metrics(result.holdout[-1], prefix="holdout final")
    return 0
