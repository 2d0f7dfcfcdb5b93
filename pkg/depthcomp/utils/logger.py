"""
Logging configuration using loguru.
Console output for humans, key=value lines for machines.
"""
import sys
from pathlib import Path
from typing import Dict, Optional

from loguru import logger

LOG_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
    "<level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
    "<level>{message}</level>"
)


def setup_logger(level: str = "INFO", log_dir: Optional[Path] = None, production: bool = False):
    """
    Configure logger with appropriate settings.
    Removes default handler and adds custom configuration.
    """
    logger.remove()

    logger.add(
        sys.stderr,
        format=LOG_FORMAT,
        level=level,
        colorize=True,
        backtrace=True,
        diagnose=not production,
    )

    if production and log_dir is not None:
        logger.add(
            str(Path(log_dir) / "depthcomp_{time:YYYY-MM-DD}.log"),
            rotation="00:00",
            retention="30 days",
            compression="zip",
            format=LOG_FORMAT,
            level=level,
            backtrace=True,
            diagnose=False,
        )

    return logger


app_logger = setup_logger()

# step lines of a training run go through this channel
train_logger = app_logger.bind(channel="train")


def add_train_log_sink(path: Path) -> int:
    """Write the bare key=value lines of the train channel to a file; returns the sink id."""
    path.parent.mkdir(parents=True, exist_ok=True)
    return app_logger.add(
        str(path),
        format="{message}",
        level="INFO",
        filter=lambda record: record["extra"].get("channel") == "train",
    )


def format_kv(**fields) -> str:
    """Render fields as space-separated key=value pairs."""
    parts = []
    for key, value in fields.items():
        if isinstance(value, float):
            parts.append(f"{key}={value:.9g}")
        else:
            parts.append(f"{key}={value}")
    return " ".join(parts)


def log_command(name: str, **kwargs):
    """Log a CLI command invocation with its context."""
    app_logger.info(f"Command {name} started | {format_kv(**kwargs)}")


def log_train_step(step: int, epoch: int, lr: float, components: Dict[str, float], total: float, **extra):
    """Emit one machine-readable training step line."""
    train_logger.info(format_kv(step=step, epoch=epoch, lr=lr, **components, total=total, **extra))


def log_metrics(report, prefix: str = "eval"):
    """Log a metrics report as key=value pairs."""
    app_logger.info(f"{prefix} | {format_kv(**report.model_dump())}")


def log_error(error: Exception, context: dict = None):
    """Log error with full context and traceback."""
    error_context = {"error_type": type(error).__name__, "error_message": str(error)}
    if context:
        error_context.update(context)
    app_logger.opt(exception=error).error(f"Error occurred: {error} | {format_kv(**error_context)}")
