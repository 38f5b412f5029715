"""Exception types shared across the package."""


class EmbedLensError(Exception):
    """Base class for all package errors."""


class ShapeError(EmbedLensError, ValueError):
    """Operands have incompatible or unexpected dimensions."""


class ArgumentError(EmbedLensError, ValueError):
    """An argument violates a documented precondition."""


class NumericalError(EmbedLensError, RuntimeError):
    """A numerical routine failed (non-convergence, degenerate input)."""


class DivergenceError(NumericalError):
    """An iterative optimization produced a non-finite loss.

    Carries the step index at which divergence was detected.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class FormatError(EmbedLensError, ValueError):
    """A serialized blob is malformed. Carries the offending byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
