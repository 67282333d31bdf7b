"""Fixed-point solvers (successive approximation, Newton-Kantorovich, hybrid) and
the solution objects they produce."""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, LinAlgWarning, lu_factor, lu_solve

from .bellman import (
    ExpectedValueSystem,
    LinearContinuationSystem,
    OperatorContext,
    expected_value_system,
    next_utility,
    self_approx_system,
    sieve_system,
)
from .errors import (
    DomainError,
    MaxIterations,
    SingularJacobian,
    SolverDiverged,
    UnsupportedNonSmooth,
    WeightDegeneracy,
)
from .model import ModelSpec, as_states, decision_table, utility_matrix
from .sampling import DrawSet, marginal_raw_weights, self_approx_weight_tensor
from .sieve import Projector, SieveFunction, SieveSpace
from .smoothing import smooth_max, smooth_max_grad

METHODS = ("sa", "nk", "hybrid")


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-12
    max_iter_sa: int = 100_000
    max_iter_nk: int = 50
    switch_residual: float = 1.0
    switch_iter: int = 20
    method: str = "hybrid"
    divergence_window: int = 10
    divergence_factor: float = 10.0
    max_nodes: int = 20_000

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError(f"tol must be positive, got {self.tol}")
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.max_iter_sa < 0 or self.max_iter_nk < 0:
            raise DomainError("iteration limits must be non-negative")

    def with_(self, **changes) -> "SolverConfig":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass
class IterationLog:
    """Per-iteration residuals ``||x - T(x)||_inf``, tagged with the method used."""

    entries: list = field(default_factory=list)
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def record(self, method: str, residual: float):
        ms = (time.perf_counter() - self._t0) * 1e3
        self.entries.append((len(self.entries) + 1, method, float(residual), ms))

    def count(self, method: Optional[str] = None) -> int:
        return sum(1 for e in self.entries if method is None or e[1] == method)

    @property
    def residuals(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries])

    @property
    def final_residual(self) -> float:
        return self.entries[-1][2] if self.entries else float("inf")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "method", "residual", "wall_time_ms"])
            for it, method, res, ms in self.entries:
                writer.writerow([it, method, repr(res), f"{ms:.3f}"])


def _sup(x) -> float:
    return float(np.max(np.abs(x))) if np.size(x) else 0.0


def solve_sa(system, x0, config: SolverConfig = SolverConfig(), log: Optional[IterationLog] = None,
             stop_residual: Optional[float] = None, max_iter: Optional[int] = None):
    """Iterate ``x <- T(x)`` until the step is at most ``tol``.

    ``stop_residual`` and ``max_iter`` let the hybrid solver end the phase early
    without raising. Returns ``(x, log, converged)``.
    """
    log = IterationLog() if log is None else log
    x = np.array(x0, dtype=float)
    limit = config.max_iter_sa if max_iter is None else max_iter
    growth, prev, best = 0, np.inf, np.inf
    for _ in range(limit):
        tx = system.image(x)
        res = _sup(tx - x)
        log.record("sa", res)
        x = tx
        if not np.isfinite(res):
            raise SolverDiverged("non-finite iterate in successive approximation")
        if res <= config.tol:
            return x, log, True
        growth = growth + 1 if res > prev else 0
        prev, best = res, min(best, res)
        # projected operators can expand transiently, so sustained growth alone is not enough
        if growth >= config.divergence_window and res > max(config.divergence_factor * best, 1e-6):
            raise SolverDiverged(
                f"residual grew for {growth} consecutive iterations to {res:.3g} (best {best:.3g}); "
                "the projected operator is probably not a contraction"
            )
        if stop_residual is not None and res < stop_residual:
            return x, log, False
    if max_iter is not None:
        return x, log, False
    raise MaxIterations(f"SA did not reach tol={config.tol:g} in {limit} iterations (residual {prev:.3g})")


def solve_nk(system, x0, config: SolverConfig = SolverConfig(), log: Optional[IterationLog] = None):
    """Newton iterations on ``S(x) = x - T(x)`` with ``H = I - dT/dx``. Returns ``(x, log)``."""
    log = IterationLog() if log is None else log
    x = np.array(x0, dtype=float)
    I = np.eye(system.size)
    for _ in range(config.max_iter_nk + 1):
        tx, J = system.image_and_jacobian(x)
        S = x - tx
        res = _sup(S)
        log.record("nk", res)
        if not np.isfinite(res):
            raise SolverDiverged("non-finite iterate in Newton-Kantorovich")
        if res <= config.tol:
            return x, log
        if log.count("nk") > config.max_iter_nk:
            break
        try:
            with np.errstate(all="raise"), warnings.catch_warnings():
                warnings.simplefilter("error", LinAlgWarning)
                lu = lu_factor(I - J, check_finite=True)
        except (LinAlgError, LinAlgWarning, ValueError, FloatingPointError) as exc:
            raise SingularJacobian("Newton system could not be factorized") from exc
        if np.any(np.abs(np.diag(lu[0])) < 1e-14 * max(1.0, _sup(lu[0]))):
            raise SingularJacobian("Newton matrix is numerically singular")
        x = x - lu_solve(lu, S)
    raise MaxIterations(f"NK did not reach tol={config.tol:g} in {config.max_iter_nk} iterations")


def solve_hybrid(system, x0, config: SolverConfig = SolverConfig(), log: Optional[IterationLog] = None):
    """SA until the residual drops below ``switch_residual`` or ``switch_iter`` steps, then NK."""
    log = IterationLog() if log is None else log
    x, log, done = solve_sa(system, x0, config, log, stop_residual=config.switch_residual,
                            max_iter=config.switch_iter)
    if done:
        return x, log
    return solve_nk(system, x, config, log)


def solve(system, x0, config: SolverConfig = SolverConfig()):
    """Dispatch on ``config.method``; returns ``(x, log)``."""
    if config.method == "sa":
        x, log, _ = solve_sa(system, x0, config)
        return x, log
    if config.method == "nk":
        return solve_nk(system, x0, config)
    return solve_hybrid(system, x0, config)


# --------------------------------------------------------------------------------------
# Sieve solutions


@dataclass
class SieveSolution:
    """Solved sieve coefficients; ``coef`` is ``(K,)`` for v or ``(K, D)`` for V."""

    coef: np.ndarray
    space: SieveSpace
    log: IterationLog
    kind: str = "integrated"

    def __call__(self, states) -> np.ndarray:
        return SieveFunction(self.space, self.coef)(states)

    @property
    def function(self) -> SieveFunction:
        return SieveFunction(self.space, self.coef)


def _sieve_setup(ctx: OperatorContext, space: SieveSpace):
    if space.d_z != ctx.spec.d_z:
        raise DomainError("sieve dimension does not match the model")
    return Projector(space, ctx.eval_points)


def solve_sieve(ctx: OperatorContext, space: SieveSpace, config: SolverConfig = SolverConfig(),
                initial_alpha=None) -> SieveSolution:
    """Projected integrated-value fixed point, using the method in ``config``.

    The context's evaluation points double as the projection design points.
    """
    proj = _sieve_setup(ctx, space)
    system = sieve_system(ctx, space.basis, proj.matrix)
    if config.method != "sa" and not system.smooth:
        raise UnsupportedNonSmooth("Newton steps need a positive smoothing parameter; use method='sa'")
    x0 = np.zeros(space.K) if initial_alpha is None else np.asarray(initial_alpha, dtype=float)
    coef, log = solve(system, x0, config)
    return SieveSolution(coef, space, log)


def solve_nk_sieve(ctx: OperatorContext, space: SieveSpace, initial_alpha=None,
                   config: SolverConfig = SolverConfig()) -> SieveSolution:
    """Pure Newton-Kantorovich solve of the projected integrated-value equations."""
    return solve_sieve(ctx, space, config.with_(method="nk"), initial_alpha)


def solve_sieve_expected(ctx: OperatorContext, space: SieveSpace,
                         config: SolverConfig = SolverConfig(), initial_alpha=None) -> SieveSolution:
    """Projected expected-value fixed point; coefficients ``(K, D)``."""
    proj = _sieve_setup(ctx, space)
    system = expected_value_system(ctx.spec, space.basis, ctx.next_states(), ctx.weights(), proj.matrix)
    return solve_expected_system(system, space, config, initial_alpha)


def solve_expected_system(system: ExpectedValueSystem, space: SieveSpace,
                          config: SolverConfig = SolverConfig(), initial_alpha=None) -> SieveSolution:
    x0 = np.zeros(system.size) if initial_alpha is None else np.asarray(initial_alpha, float).reshape(-1)
    x, log = solve(system, x0, config)
    return SieveSolution(x.reshape(system.K, system.D), space, log, kind="expected")


# --------------------------------------------------------------------------------------
# Self-approximating solutions


@dataclass
class SelfApproxSolution:
    """Nodal values at the marginal draws: ``(N,)`` for v, ``(N, D)`` for V."""

    values: np.ndarray
    draws: DrawSet
    spec: ModelSpec
    log: IterationLog
    kind: str = "integrated"
    lam: Optional[float] = None

    def __call__(self, z) -> np.ndarray:
        return evaluate_self_approx(self, z)


class _NodalExpectedSystem:
    """``V[k, d] = sum_i W[k, d, i] G(u(Z_i) + beta V[i])`` on the marginal draws."""

    def __init__(self, spec: ModelSpec, draws: DrawSet, W: np.ndarray):
        self.W, self.beta, self.lam = W, spec.beta, spec.lambda_ev
        self.U = next_utility(spec, draws.draws)
        self.N, self.D = self.U.shape

    @property
    def size(self) -> int:
        return self.N * self.D

    def image(self, x):
        G = smooth_max(self.U + self.beta * x.reshape(self.N, self.D), self.lam)
        return (self.W @ G).reshape(-1)

    def image_and_jacobian(self, x):
        r = self.U + self.beta * x.reshape(self.N, self.D)
        G, P = smooth_max(r, self.lam), smooth_max_grad(r, self.lam)
        J = self.beta * np.einsum("kdi,ie->kdie", self.W, P).reshape(self.size, self.size)
        return (self.W @ G).reshape(-1), J


def _check_nodes(draws: DrawSet, config: SolverConfig):
    if draws.kind != "marginal":
        raise DomainError("the self-approximating method needs marginal draws")
    if draws.n > config.max_nodes:
        raise MemoryError(f"N={draws.n} exceeds the node cap {config.max_nodes}; raise max_nodes to override")


def solve_self_approx(spec: ModelSpec, draws: DrawSet, config: SolverConfig = SolverConfig(),
                      initial=None, lam: Optional[float] = None, kind: str = "integrated") -> SelfApproxSolution:
    """Solve the simulated fixed point at the N marginal draws."""
    _check_nodes(draws, config)
    W = self_approx_weight_tensor(spec, draws)
    if kind == "integrated":
        system = self_approx_system(spec, draws, W, lam)
        if config.method != "sa" and not system.smooth:
            raise UnsupportedNonSmooth("Newton steps need a positive smoothing parameter; use method='sa'")
        x0 = np.zeros(draws.n) if initial is None else np.asarray(initial, dtype=float)
        x, log = solve(system, x0, config)
        return SelfApproxSolution(x, draws, spec, log, lam=lam)
    if kind != "expected":
        raise DomainError(f"unknown value-function kind {kind!r}")
    if lam is not None:
        raise DomainError("simulated taste shocks are supported for the integrated value only")
    system = _NodalExpectedSystem(spec, draws, W)
    x0 = np.zeros(system.size) if initial is None else np.asarray(initial, dtype=float).reshape(-1)
    x, log = solve(system, x0, config)
    return SelfApproxSolution(x.reshape(system.N, system.D), draws, spec, log, kind="expected")


def solve_nk_self_approx(spec: ModelSpec, draws: DrawSet, initial=None,
                         config: SolverConfig = SolverConfig()) -> SelfApproxSolution:
    """Pure Newton solve of the N nodal equations for the integrated value function."""
    return solve_self_approx(spec, draws, config.with_(method="nk"), initial)


def evaluate_self_approx(solution: SelfApproxSolution, z, newton_iter: int = 50) -> np.ndarray:
    """Extend nodal values to arbitrary states through the sampling weights.

    For the integrated value, a state that is not itself a draw still carries the
    point mass of keeping, which puts ``v(z)`` on both sides of the equation. That
    scalar equation is monotone with slope at least ``1 - beta`` and is solved by
    Newton's method; at a draw the nodal identity is recovered exactly.
    """
    spec, draws = solution.spec, solution.draws
    if solution.lam is not None:
        raise DomainError("simulated taste shocks exist only at the draws; off-grid evaluation "
                          "is defined for analytically integrated shocks")
    states = as_states(spec, z)
    shape = states.shape[:-1]
    pts = states.reshape(-1, spec.d_z)
    raw = marginal_raw_weights(spec, draws, pts)  # (M, D, N)
    total = raw.sum(axis=-1)

    if solution.kind == "expected":
        if np.any(total == 0):
            bad = np.argwhere(total == 0)
            raise WeightDegeneracy(f"{len(bad)} (state, decision) pairs have no weight", rows=bad)
        G = smooth_max(next_utility(spec, draws.draws) + spec.beta * solution.values, spec.lambda_ev)
        return ((raw @ G) / total).reshape(shape + (spec.n_decisions,))

    keep = int(np.flatnonzero(~decision_table(spec.d_z).any(axis=1))[0])
    on_grid = (pts[:, None, :] == draws.draws[None, :, :]).all(axis=-1).any(axis=1)
    atom = np.zeros_like(total)
    atom[:, keep] = np.where(on_grid, 0.0, spec.pi ** spec.d_z)
    denom = total + atom
    if np.any(denom == 0):
        bad = np.argwhere(denom == 0)
        raise WeightDegeneracy(f"{len(bad)} (state, decision) pairs have no weight", rows=bad)
    known = (raw @ solution.values) / denom
    share = atom / denom
    U = utility_matrix(spec, pts)
    v = smooth_max(U + spec.beta * known, spec.lambda_ev)
    if np.any(share > 0):
        for _ in range(newton_iter):
            r = U + spec.beta * (known + share * v[:, None])
            f = v - smooth_max(r, spec.lambda_ev)
            slope = 1.0 - spec.beta * np.sum(smooth_max_grad(r, spec.lambda_ev) * share, axis=-1)
            step = f / slope
            v = v - step
            if _sup(step) <= 1e-13 * max(1.0, _sup(v)):
                break
    return v.reshape(shape)
