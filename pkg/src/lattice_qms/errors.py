"""Exception types raised across the package."""


class LatticeQMSError(Exception):
    """Base class for all package errors."""


class SupportError(LatticeQMSError, ValueError):
    """An operator support is not contained in the requested volume."""


class HypothesisViolation(LatticeQMSError, ValueError):
    """Bound parameters violate one of the smallness hypotheses.

    The ``inequality`` attribute names the failing condition.
    """

    def __init__(self, message, inequality=None):
        super().__init__(message)
        self.inequality = inequality


class DegenerateKernelError(LatticeQMSError):
    """The zero eigenvalue of a generator is not simple."""

    def __init__(self, message, multiplicity):
        super().__init__(message)
        self.multiplicity = multiplicity


class IllConditionedKernelError(LatticeQMSError):
    """Uniqueness of the stationary state is ambiguous at working precision."""


class ConvergenceError(LatticeQMSError, RuntimeError):
    """An iterative numerical method failed to reach its tolerance."""

    def __init__(self, message, achieved=None, trace=None):
        super().__init__(message)
        self.achieved = achieved
        self.trace = trace


class SingularRestrictionError(LatticeQMSError):
    """A generator restricted to an excited subspace is (nearly) singular."""


class QuadratureBudgetExceeded(LatticeQMSError):
    """Nested quadrature would need more integrand evaluations than allowed."""
