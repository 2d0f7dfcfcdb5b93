"""
Command-line entry point for the depth completion toolkit.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 numerical failure.
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

from depthcomp import __version__
from depthcomp.commands import evaluate, fill, predict, sample, sgm, train
from depthcomp.commands.options import positive_int
from depthcomp.config import load_settings
from depthcomp.utils.errors import DepthCompError, UsageError
from depthcomp.utils.logger import app_logger, log_command, log_error, setup_logger

COMMANDS = (fill, sgm, sample, train, predict, evaluate)


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with code 1 through UsageError."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="depthcomp",
        description="Depth completion toolkit: fill, stereo, sampling, training, prediction, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, default=None,
                        help="TOML file with [fill], [sgm], [network], [train] sections; flags override it")
    parser.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="console log level")
    parser.add_argument("--jobs", type=positive_int, default=None, help="parallel workers for per-file work (count)")

    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        settings = load_settings(args.config)
        if args.jobs is not None:
            settings = settings.model_copy(update={"jobs": args.jobs})
        setup_logger(args.log_level or settings.log_level, settings.log_dir, settings.is_production)

        app_logger.debug(f"depthcomp {__version__} | environment={settings.environment} | jobs={settings.jobs}")
        log_command(command, config=args.config, jobs=settings.jobs)
        return args.handler(args, settings)

    except SystemExit as exit_:
        # --help and --version
        return int(exit_.code or 0)
    except DepthCompError as e:
        app_logger.debug(f"{type(e).__name__} in {command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        log_error(e, {"command": command})
        print(f"error: unexpected failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
