"""Exception types shared across the package."""


class TensorCompError(Exception):
    """Base class for all package errors."""


class ConvergenceError(TensorCompError):
    """An iterative solver failed to converge within its budget."""


class DegeneracyError(TensorCompError):
    """A basis, Gram matrix or decomposition became rank deficient."""


class BudgetError(TensorCompError, ValueError):
    """Sampling probabilities exceed the available observation budget."""


class ObservationFormatError(TensorCompError, ValueError):
    """A text file could not be parsed."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno
