"""
Exception hierarchy for lower-tail computations.

Every error raised on purpose by the services derives from LowerTailError, so the
experiment harness can record it in a report row and move on to the next one.
"""

from typing import Optional, Any


class LowerTailError(Exception):
    """Base class for all lowertail errors."""


class DomainError(LowerTailError, ValueError):
    """Raised when a parameter lies outside the domain of an operation."""


class AbsoluteContinuityError(DomainError):
    """Raised when P puts mass on a point where Q has none."""


class SupportViolationError(DomainError):
    """Raised when a_i > 0 for some index with b_i = 0 in a log-sum comparison."""


class PreconditionError(DomainError):
    """Raised when a stated precondition of an inequality does not hold."""


class InfeasibleMeasureError(PreconditionError):
    """Raised when a product measure violates the constraint it is supposed to satisfy."""


class NumericalError(LowerTailError):
    """Raised when a quantity that is nonnegative in exact arithmetic comes out clearly negative."""


class BudgetExceededError(LowerTailError):
    """Raised when an instance is too large for exact enumeration."""


class ZeroProbabilityError(LowerTailError):
    """Raised when conditioning on an event of probability zero."""


class VacuousCertificateError(LowerTailError):
    """Raised when the tilted certificate has Pr(Y' in Y1 and Y2) = 0."""


class ConfigError(LowerTailError):
    """Raised for invalid experiment configuration; aborts the run."""


class SolverConvergenceError(LowerTailError):
    """Raised when no multi-start run of the variational solver converged.

    The best iterate found (as a VariationalSolution) and its KKT residual are
    attached so callers can still inspect them.
    """

    def __init__(self, message: str, best: Optional[Any] = None):
        super().__init__(message)
        self.best = best
        self.residual = getattr(best, "kkt_residual", None)
