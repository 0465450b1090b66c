"""Exception hierarchy for fisst_mht."""

from typing import Optional


class FisstError(Exception):
    """Base class for every error raised by fisst_mht."""


class ConfigError(FisstError, ValueError):
    """Invalid scenario, model or run parameters."""


class DimensionError(FisstError, ValueError):
    """Inconsistent shapes, or more detections than targets."""


class RangeError(FisstError, ValueError):
    """A count or index outside its admissible domain."""


class NumericalError(FisstError, ArithmeticError):
    """Singular innovation covariance or a covariance that is not positive definite."""


class ResourceGuardError(FisstError):
    """An oracle tensor would exceed the configured cell budget."""


class ExplosionGuardError(FisstError):
    """Hypothesis enumeration exceeded its configured cap."""

    def __init__(self, message: str, scan_index: Optional[int] = None) -> None:
        if scan_index is not None:
            message = f"scan {scan_index}: {message}"
        super().__init__(message)
        self.scan_index = scan_index
