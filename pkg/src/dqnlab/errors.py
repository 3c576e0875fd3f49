"""Exception types raised by the package."""


class DqnLabError(Exception):
    """Base class for all package errors."""


class ConfigError(DqnLabError):
    """Invalid configuration (bad layer specs, malformed config file, ...)."""


class ShapeError(DqnLabError):
    """Array or network shape mismatch."""


class UsageError(DqnLabError):
    """API precondition violated (bad action index, sampling too early, ...)."""


class TrainingError(DqnLabError):
    """Non-finite values encountered during optimization."""


class AnalysisError(DqnLabError):
    """Analysis input does not cover the requested data."""
