"""
Configuration management using Pydantic Settings.

Precedence, highest first: CLI flags > TOML config file > DEPTHCOMP_* environment
variables (also read from .env) > defaults.
"""
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Optional

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from depthcomp.models.schemas import FillParams, NetworkConfig, SgmParams, TrainConfig
from depthcomp.utils.errors import ConfigurationError


class Settings(BaseSettings):
    """Toolkit settings loaded from the environment and an optional config file."""

    # Application Settings
    environment: str = "development"
    log_level: str = "INFO"
    log_dir: Path = Path("logs")
    cache_dir: Path = Path(".cache/stereo")

    # Dataset
    max_depth_m: float = Field(85.0, gt=0)

    # Parallelism
    jobs: int = Field(1, ge=1)

    # Module parameter sections
    fill: FillParams = Field(default_factory=FillParams)
    sgm: SgmParams = Field(default_factory=SgmParams)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    model_config = SettingsConfigDict(
        env_prefix="DEPTHCOMP_",
        env_nested_delimiter="__",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    @property
    def is_production(self) -> bool:
        """Check if running in production environment."""
        return self.environment.lower() == "production"

    def with_overrides(self, section: str, **values: Any) -> "Settings":
        """
        Return a copy with non-None values merged into one section.

        Values pass through the section's validators, so a bad flag surfaces
        as a ConfigurationError rather than a silently invalid model.
        """
        updates = {k: v for k, v in values.items() if v is not None}
        if not updates:
            return self
        current = getattr(self, section)
        try:
            merged = type(current).model_validate({**current.model_dump(), **updates})
        except ValidationError as exc:
            raise ConfigurationError(f"invalid [{section}] parameters: {exc}") from exc
        return self.model_copy(update={section: merged})


def read_config_file(path: Path) -> Dict[str, Any]:
    """Parse a TOML config file into a plain dict."""
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid TOML: {exc}") from exc


def load_settings(config_path: Optional[Path] = None) -> Settings:
    """
    Build settings from the environment, layering a config file on top.

    Args:
        config_path: Optional TOML file with [fill], [sgm], [network], [train] sections

    Returns:
        Validated settings

    Raises:
        ConfigurationError: If the file is unreadable or a value violates a constraint
    """
    data = read_config_file(config_path) if config_path else {}
    try:
        return Settings(**data)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from exc
