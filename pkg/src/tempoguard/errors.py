"""Exception types shared across the package."""


class TempoGuardError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(TempoGuardError, ValueError):
    """A caller-supplied value violates an operation's precondition."""


class NumericFailureError(TempoGuardError, ArithmeticError):
    """Optimization produced a non-finite quantity."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class FrameFormatError(TempoGuardError, ValueError):
    """A frame file could not be parsed."""


class TruncatedRecordError(FrameFormatError):
    """Frame file ended mid-record or carries stray trailing bytes."""


class NonFiniteValueError(FrameFormatError):
    """Frame file contains NaN or infinite coordinates/timestamps."""
