"""Exception hierarchy for copfrail."""


class CopfrailError(Exception):
    """Base class for all package errors."""


class DataError(CopfrailError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A row of an input file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(DataError):
    """Data parsed but violates a structural invariant."""


class DomainError(CopfrailError, ValueError):
    """An argument lies outside the support of a function."""


class MatrixError(CopfrailError, ValueError):
    """A matrix argument is not a valid (positive definite) correlation matrix."""


class OptimizationError(CopfrailError):
    """An iterative solver failed to converge.

    Attributes
    ----------
    last : object
        The last iterate reached before giving up.
    trace : list
        Optional iteration history.
    """

    def __init__(self, message, last=None, trace=None):
        super().__init__(message)
        self.last = last
        self.trace = trace if trace is not None else []


class EstimationError(CopfrailError):
    """An M-step update is not identifiable on the given data."""


class FitError(CopfrailError):
    """An MCEM fit aborted; the iteration trace so far is attached."""

    def __init__(self, message, trace=None, stage=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
        self.stage = stage


class StudyError(CopfrailError):
    """A replication study is misconfigured or produced too few usable fits."""
