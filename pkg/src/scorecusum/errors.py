"""Exception hierarchy shared across the package."""


class ScoreCusumError(Exception):
    """Base class for all package errors."""


class InputError(ScoreCusumError, ValueError):
    """Malformed or inconsistent input (shapes, ranges, empty data)."""


class NumericError(ScoreCusumError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class TrainingDivergedError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})", location=epoch)
        self.epoch = epoch
        self.loss = loss


class DataError(ScoreCusumError):
    """A data file could not be parsed."""
