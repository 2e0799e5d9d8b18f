"""
Error types raised by the library.

The CLI maps every RideError to its exit_code; anything else is a bug.
"""
from typing import Any, Optional


class RideError(Exception):
    """Base class for all library errors"""

    exit_code: int = 1


class ShapeError(RideError, ValueError):
    """Array shapes or dimensions do not agree"""


class NonFiniteError(RideError, ArithmeticError):
    """A NaN or infinity showed up where finite values are required"""


class ConfigError(RideError, ValueError):
    """Invalid or contradictory configuration"""

    exit_code = 2


class ModelFormatError(RideError):
    """Model or operator file is malformed, truncated or fails its checksum"""

    exit_code = 3


class ModelVersionError(ModelFormatError):
    """File was written by an unsupported format version"""


class ImageFormatError(RideError):
    """Image file cannot be decoded"""

    exit_code = 3


class OperatorError(RideError, ValueError):
    """Measurement operator cannot be built or used as requested"""


class DegeneratePosteriorError(RideError, ArithmeticError):
    """Every mixture weight underflowed to zero"""


class TrainingDivergedError(NonFiniteError):
    """Training produced a non-finite loss or gradient"""

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


class RecoveryDivergedError(NonFiniteError):
    """An inference iterate became non-finite"""

    def __init__(self, message: str, trace: Optional[Any] = None):
        super().__init__(message)
        self.trace = trace
