"""Exception hierarchy shared by all modules."""


class SimBellmanError(Exception):
    """Base class for package errors."""


class DomainError(SimBellmanError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class WeightDegeneracy(SimBellmanError, ArithmeticError):
    """Importance weights sum to zero, so normalized weights are undefined."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = rows


class SingularProjection(SimBellmanError, ArithmeticError):
    """The Gram matrix of a sieve projector is not positive definite."""


class SolverError(SimBellmanError, RuntimeError):
    """Base class for fixed-point solver failures."""


class MaxIterations(SolverError):
    pass


class SingularJacobian(SolverError):
    pass


class UnsupportedNonSmooth(SolverError):
    """Newton steps requested for an operator with a hard max (lambda = 0)."""


class SolverDiverged(SolverError):
    """Successive approximation residuals kept growing."""
