"""Smoothed simulated Bellman operators: sieve and self-approximating solvers."""

from .errors import (
    DomainError, MaxIterations, SimBellmanError, SingularJacobian, SingularProjection, SolverDiverged,
    SolverError, UnsupportedNonSmooth, WeightDegeneracy,
)
from .model import ModelSpec
from .sieve import Projector, SieveSpace
from .solver import SolverConfig, solve_self_approx, solve_sieve

__version__ = "0.1.0"

__all__ = [
    "DomainError", "MaxIterations", "ModelSpec", "Projector", "SieveSpace", "SimBellmanError",
    "SingularJacobian", "SingularProjection", "SolverConfig", "SolverDiverged", "SolverError",
    "UnsupportedNonSmooth", "WeightDegeneracy", "solve_self_approx", "solve_sieve",
]
