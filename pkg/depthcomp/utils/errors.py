"""
Exception hierarchy for the toolkit.
Every error maps to a CLI exit code: 1 usage, 2 data/format, 3 numeric failure.
"""


class DepthCompError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 2

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def __str__(self) -> str:
        return self.message


class InvalidInputError(DepthCompError):
    """An argument violates an operation's domain (negative disparity, z <= 0, ...)."""


class FormatError(DepthCompError):
    """A file is missing, unreadable, or has the wrong bit depth / channel count."""


class RangeError(DepthCompError):
    """A value cannot be represented in the target encoding."""


class ManifestError(DepthCompError):
    """A dataset manifest failed validation."""


class UnfillableInputError(DepthCompError):
    """Morphological filling was asked to densify a map without any valid pixel."""


class IncompatibleCheckpointError(DepthCompError):
    """A checkpoint does not match the running format version or model configuration."""


class ConfigurationError(DepthCompError):
    """A parameter block or network configuration is inconsistent."""

    exit_code = 1


class UsageError(DepthCompError):
    """The command line was malformed."""

    exit_code = 1


class ShapeError(DepthCompError):
    """Tensor shapes are incompatible with an operator contract."""

    exit_code = 3


class NumericalError(DepthCompError):
    """A non-finite value appeared in a computation."""

    exit_code = 3
