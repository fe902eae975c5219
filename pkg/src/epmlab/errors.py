"""Exception hierarchy shared by every module."""


class EPMError(Exception):
    """Base class for all errors raised by epmlab."""


class DomainError(EPMError, ValueError):
    """Non-finite input or value outside the mathematical domain."""


class ShapeError(EPMError, ValueError):
    """Grid, dimension or array-length mismatch."""


class ConfigurationError(EPMError, ValueError):
    """Invalid parameters or configuration."""


class UsageError(EPMError, ValueError):
    """Operation called outside its contract (e.g. off-grid query)."""


class NumericError(EPMError, ArithmeticError):
    """Overflow, underflow or a non-finite intermediate result."""


class LinearDomainOverflow(NumericError):
    """Linear-domain kernel entries overflow; use the log-domain path."""


class UnderflowError(NumericError):
    """Stationary weights too small to divide by."""


class NonConvergenceError(EPMError, RuntimeError):
    """Iteration hit ``max_iter`` before meeting its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0, partial=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.partial = partial


class InsufficientDataError(EPMError, ValueError):
    """Not enough usable data points for a fit."""


class InternalInvariantError(EPMError, AssertionError):
    """An invariant that should hold by construction was violated."""
