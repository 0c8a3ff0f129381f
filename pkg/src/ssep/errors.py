"""Exception types raised by the inference routines."""


class SSEPError(Exception):
    pass


class NotPositiveDefiniteError(SSEPError, ValueError):
    """Cholesky factorization of a precision-like matrix failed."""


class ConstraintError(SSEPError, ValueError):
    pass


class EqualityConstraintError(ConstraintError):
    """marginal != site + cavity beyond tolerance."""


class InequalityConstraintError(ConstraintError):
    """A precision vector fell below its lower bound."""


class NonFiniteError(SSEPError, FloatingPointError):
    pass


class NonKKTPointError(SSEPError):
    """Recovered inequality multipliers have the wrong sign."""


class DescentViolationError(SSEPError):
    """The double-loop energy increased between outer iterations."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
