"""Exception types shared across the package."""


class GcnSaError(Exception):
    """Base class for all package errors."""


class ShapeError(GcnSaError, ValueError):
    pass


class ConfigError(GcnSaError, ValueError):
    pass


class DataError(GcnSaError, ValueError):
    """A dataset file could not be parsed or failed validation."""


class NumericalError(GcnSaError, FloatingPointError):
    """A NaN or infinity appeared in a computation."""
