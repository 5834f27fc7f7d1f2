"""Exception hierarchy shared by every MOSAttack module."""

from typing import Optional


class MOSAttackError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(MOSAttackError, ValueError):
    """Raised when an argument violates a documented precondition."""


class ConfigError(InvalidArgumentError):
    """Raised when a configuration file cannot be parsed or validated."""


class UnsupportedLossError(MOSAttackError, ValueError):
    """Raised when a loss cannot be evaluated for the given class count."""

    def __init__(self, loss_id: int, message: str) -> None:
        super().__init__(message)
        self.loss_id = loss_id


class NumericError(MOSAttackError, ArithmeticError):
    """Raised when a computation produces NaN or infinite values."""

    def __init__(self, message: str, loss_id: Optional[int] = None) -> None:
        if loss_id is not None:
            message = f"{message} (loss id {loss_id})"
        super().__init__(message)
        self.loss_id = loss_id


class TrainingFailure(MOSAttackError):
    """Raised when toy-model training diverges."""


class WeightFileError(MOSAttackError, ValueError):
    """Raised when a weight file is malformed.

    Attributes:
        offset: Byte offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class MinerError(MOSAttackError):
    """Raised when pattern mining fails."""
