"""Exception types shared across the package."""

__all__ = ["DataError", "NumericError", "CheckpointError"]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class NumericError(ArithmeticError):
    """Numerical failure (divergence, non-finite values) during a run."""


class CheckpointError(RuntimeError):
    """Unreadable, corrupted, or version-incompatible checkpoint."""
