"""Exception hierarchy shared across the package."""


class UmimixError(Exception):
    """Base class for all errors raised by umimix."""


class MatrixFormatError(UmimixError, ValueError):
    """Raised when an input matrix or ID file cannot be parsed or is inconsistent."""


class ValidationError(UmimixError, ValueError):
    """Raised when inputs violate an operation's preconditions."""


class FilterError(UmimixError, ValueError):
    """Raised when filtering would leave no cells or no genes."""


class EstimationError(UmimixError, ValueError):
    """Raised when a concentration estimator has no usable genes or too few cells."""


class FitError(UmimixError, RuntimeError):
    """Raised when EM fitting fails (degenerate model, non-finite likelihood)."""
