"""Exception types raised across the package."""


class ImseError(Exception):
    """Base class for all package errors."""


class ShapeError(ImseError, ValueError):
    """Array shapes are incompatible with an operation."""


class GeometryError(ImseError, ValueError):
    """Unsupported kernel geometry (e.g. even kernel sizes)."""


class ConfigError(ImseError, ValueError):
    """Invalid configuration value."""


class EmptySequenceError(ImseError, ValueError):
    """Attention was asked to run on a zero-length sequence."""


class CheckpointError(ImseError):
    """Checkpoint file is corrupt, truncated or from another format version."""


class WavError(ImseError):
    """Malformed or unsupported WAV file."""


class TrainingDiverged(ImseError, FloatingPointError):
    """Loss became non-finite during training."""
