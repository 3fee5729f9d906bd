"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ParseError (and OSError) -> 2,
ValidationError / ValueError -> 3, anything else -> 1.
"""


class LaminaeError(Exception):
    """Base class for package errors."""


class ParseError(LaminaeError):
    """A file exists but its content cannot be parsed in the declared format."""


class ValidationError(LaminaeError, ValueError):
    """Parsed data violates an invariant (bad polygon, missing boundary, ...)."""


class ConvergenceError(LaminaeError):
    """An iterative solve stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class TrainingError(LaminaeError):
    """Training aborted (non-finite loss)."""

    def __init__(self, message: str, epoch: int, last_finite_loss: float):
        super().__init__(message)
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss


class GenerationError(LaminaeError):
    """Synthetic-instance generation could not satisfy its constraints."""
