"""Monte Carlo harness: exact references, replication studies, rate fits and diagnostics."""

from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from .bellman import OperatorContext, quadrature_sieve_system
from .errors import DomainError, SimBellmanError
from .model import ModelSpec
from .sampling import draw_conditional, draw_marginal_uniform
from .sieve import Projector, SieveSpace
from .solver import SolverConfig, solve, solve_self_approx, solve_sieve

log = logging.getLogger(__name__)

EXACT_J = 60
EXACT_J_TENSOR = 30
MAX_FAILURE_SHARE = 0.01


def default_grid(spec: ModelSpec, n_points: Optional[int] = None) -> np.ndarray:
    """Evaluation grid: 500 points on the domain, or a 16 x 16 lattice (~250) in 2-D."""
    lo, hi = spec.z_min, spec.z_max_domain
    if spec.d_z == 1:
        return np.linspace(lo, hi, n_points or 500)
    side = int(round(np.sqrt(n_points or 250)))
    g = np.linspace(lo, hi, side)
    a, b = np.meshgrid(g, g, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=-1)


# --------------------------------------------------------------------------------------
# Exact reference


@dataclass(frozen=True)
class ExactReference:
    """Deterministic value function used as the truth in experiments.

    ``parts`` holds one or more sieve solutions; with ``additive`` set, the value at
    ``(z1, z2)`` is the sum of the univariate solution at each coordinate.
    """

    spec: ModelSpec
    space: SieveSpace
    coef: tuple
    additive: bool = False
    residual: float = 0.0

    def __call__(self, states) -> np.ndarray:
        coef = np.asarray(self.coef)
        states = np.asarray(states, dtype=float)
        if self.additive:
            return sum(self.space.basis(states[..., i]) @ coef for i in range(self.spec.d_z))
        return self.space.basis(states) @ coef


def solve_quadrature_sieve(spec: ModelSpec, J: int, n_nodes: int = 60,
                           config: SolverConfig = SolverConfig(tol=1e-12)):
    """Quadrature operator projected on a Chebyshev (tensor) sieve, hybrid-solved.

    Returns ``(space, coef, log, residual)``.
    """
    space = SieveSpace("chebyshev", J, z_min=spec.z_min, z_max=spec.z_max_domain, d_z=spec.d_z,
                       node_rule="roots")
    points = space.design_points()
    proj = Projector(space, points)
    system = quadrature_sieve_system(spec, space.univariate, points, proj.matrix, n_nodes)
    coef, it_log = solve(system, np.zeros(space.K), config)
    residual = float(np.max(np.abs(system.image(coef) - coef)))
    return space, coef, it_log, residual


@lru_cache(maxsize=32)
def exact_reference(spec: ModelSpec, J: Optional[int] = None, n_nodes: int = 60) -> ExactReference:
    """Quadrature + Chebyshev reference (K=60 univariate).

    Additive bivariate models reuse the univariate solution; interaction models are
    solved on a tensor basis (J=30 per dimension by default).
    """
    if spec.d_z == 1:
        space, coef, _, res = solve_quadrature_sieve(spec, J or EXACT_J, n_nodes)
        return ExactReference(spec, space, tuple(coef), residual=res)
    if spec.d_z == 2 and spec.kappa == 0:
        uni = exact_reference(spec.replace(d_z=1), J, n_nodes)
        return ExactReference(spec, uni.space, uni.coef, additive=True, residual=uni.residual)
    if spec.d_z == 2:
        space, coef, _, res = solve_quadrature_sieve(spec, J or EXACT_J_TENSOR, n_nodes)
        return ExactReference(spec, space, tuple(coef), residual=res)
    raise DomainError("exact references cover d_z <= 2")


def coefficient_report(coef, J: int) -> np.ndarray:
    """Tensor coefficients laid out as a ``J x J`` table, entry ``[j1-1, j2-1]``."""
    coef = np.asarray(coef, dtype=float)
    if coef.shape != (J * J,):
        raise DomainError(f"expected {J * J} tensor coefficients, got shape {coef.shape}")
    return coef.reshape(J, J)


# --------------------------------------------------------------------------------------
# Replications


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo design. ``method`` is ``"sieve"`` or ``"self_approx"``.

    ``lam`` enables simulated taste shocks (``n_eps`` of them, default ``n``) with an
    extra smoothing level; ``None`` integrates the shocks analytically.
    """

    spec: ModelSpec = ModelSpec()
    method: str = "sieve"
    family: str = "chebyshev"
    J: int = 10
    order: int = 2
    M: Optional[int] = None
    n: int = 500
    n_eps: Optional[int] = None
    lam: Optional[float] = None
    z_max: float = 1000.0
    S: int = 200
    seed: int = 20240101
    grid_points: Optional[int] = None
    threads: int = 1
    solver: SolverConfig = SolverConfig()

    def __post_init__(self):
        if self.method not in ("sieve", "self_approx"):
            raise DomainError(f"unknown method {self.method!r}")
        if self.S < 2:
            raise DomainError("need at least two replications")
        if self.n < 1:
            raise DomainError("need at least one draw")

    def with_(self, **changes) -> "ExperimentConfig":
        from dataclasses import replace
        return replace(self, **changes)

    @property
    def K(self) -> int:
        return self.J ** self.spec.d_z if self.method == "sieve" else self.n

    def space(self) -> SieveSpace:
        return SieveSpace(self.family, self.J, self.order, self.spec.z_min, self.spec.z_max_domain, self.spec.d_z)

    def solver_config(self) -> SolverConfig:
        if self.lam == 0 and self.solver.method != "sa":
            return self.solver.with_(method="sa")
        return self.solver


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    grid: np.ndarray
    bias: np.ndarray
    var: np.ndarray
    values: np.ndarray = field(repr=False)
    n_failed: int = 0
    wall_time_s: float = 0.0

    @property
    def mse(self) -> np.ndarray:
        return self.bias ** 2 + self.var

    @property
    def sup_bias(self) -> float:
        return float(np.max(np.abs(self.bias)))

    @property
    def sup_sd(self) -> float:
        return float(np.sqrt(np.max(self.var)))

    @property
    def sup_mse(self) -> float:
        return float(np.max(self.mse))

    def record(self) -> dict:
        c = self.config
        return {
            "method": c.method, "K": c.K, "N": c.n, "lambda": "" if c.lam is None else c.lam,
            "sigma_z": c.spec.sigma_z, "S": c.S, "sup_bias": self.sup_bias, "sup_sd": self.sup_sd,
            "sup_mse": self.sup_mse, "wall_time_s": round(self.wall_time_s, 3),
        }

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        return {
            "config": cfg,
            "grid": self.grid.tolist(),
            "bias": self.bias.tolist(),
            "var": self.var.tolist(),
            "mse": self.mse.tolist(),
            "sup_bias": self.sup_bias,
            "sup_sd": self.sup_sd,
            "sup_mse": self.sup_mse,
            "n_failed": self.n_failed,
            "wall_time_s": self.wall_time_s,
        }


def replicate_once(config: ExperimentConfig, rep: int, grid: np.ndarray) -> np.ndarray:
    """Solve one replication and return its values on ``grid``."""
    spec = config.spec
    n_eps = (config.n_eps or config.n) if config.lam is not None else None
    solver_cfg = config.solver_config()
    if config.method == "sieve":
        space = config.space()
        points = space.design_points(config.M)
        draws = draw_conditional(spec, points, config.n, config.seed, key=(rep,), n_eps=n_eps)
        ctx = OperatorContext(spec, draws, lam=config.lam)
        return solve_sieve(ctx, space, solver_cfg)(grid)
    draws = draw_marginal_uniform(config.n, config.z_max, config.seed, spec.d_z, key=(rep,),
                                  n_eps=n_eps, n_decisions=spec.n_decisions)
    return solve_self_approx(spec, draws, solver_cfg, lam=config.lam)(grid)


def run_replications(config: ExperimentConfig, reference: Optional[Callable] = None,
                     replicate: Callable = replicate_once) -> ExperimentResult:
    """Run S independent replications and summarize them against the reference.

    Replication ``s`` draws from substreams keyed by ``s``, and results are stored by
    index, so the output does not depend on ``config.threads``.
    """
    t0 = time.perf_counter()
    reference = exact_reference(config.spec) if reference is None else reference
    grid = default_grid(config.spec, config.grid_points)
    truth = np.asarray(reference(grid), dtype=float)
    values = np.full((config.S, len(grid)), np.nan)

    def job(s):
        try:
            return s, np.asarray(replicate(config, s, grid), dtype=float), None
        except (SimBellmanError, ArithmeticError, MemoryError, np.linalg.LinAlgError) as exc:
            return s, None, exc

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            outcomes = list(pool.map(job, range(config.S)))
    else:
        outcomes = [job(s) for s in range(config.S)]
    failed = []
    for s, vals, exc in outcomes:
        if exc is not None:
            failed.append((s, exc))
        else:
            values[s] = vals
    if len(failed) > MAX_FAILURE_SHARE * config.S:
        s, exc = failed[0]
        raise SimBellmanError(f"{len(failed)} of {config.S} replications failed; first (rep {s}): {exc!r}")
    for s, exc in failed:
        log.warning("replication %d failed: %r", s, exc)
    ok = values[~np.isnan(values).any(axis=1)]
    mean = ok.mean(axis=0)
    bias = mean - truth
    var = ((ok - mean) ** 2).mean(axis=0)
    return ExperimentResult(config, grid, bias, var, values, len(failed), time.perf_counter() - t0)


def run_schedule(config: ExperimentConfig, n_schedule: Sequence[int], reference=None) -> list:
    return [run_replications(config.with_(n=n), reference) for n in n_schedule]


def smoothing_sweep(config: ExperimentConfig, lambdas: Sequence[float], reference=None) -> list:
    """``(lam, sup MSE)`` pairs using simulated taste shocks at each smoothing level."""
    out = []
    for lam in lambdas:
        res = run_replications(config.with_(lam=float(lam)), reference)
        out.append((float(lam), res.sup_mse))
    return out


# --------------------------------------------------------------------------------------
# Rates and normality


@dataclass(frozen=True)
class RateFit:
    alpha: float
    rho: float
    r_squared: float


def fit_rate(n_values, statistic) -> RateFit:
    """Fit ``statistic = exp(alpha + rho * ln N)`` by least squares on the log scale."""
    n_values = np.asarray(n_values, dtype=float)
    y = np.asarray(statistic, dtype=float)
    keep = (y > 0) & np.isfinite(y)
    if not keep.all():
        warnings.warn(f"dropping {np.sum(~keep)} non-positive statistics from the rate fit", RuntimeWarning)
    n_values, y = n_values[keep], y[keep]
    if len(np.unique(n_values)) < 3:
        raise DomainError("rate fits need at least three distinct N values")
    fit = stats.linregress(np.log(n_values), np.log(y))
    r2 = fit.rvalue ** 2 if np.isfinite(fit.rvalue) else 1.0
    return RateFit(float(fit.intercept), float(fit.slope), float(r2))


@dataclass(frozen=True)
class NormalityStats:
    mean: float
    sd: float
    skewness: float
    excess_kurtosis: float
    ks: float


def normality_diagnostic(values, min_size: int = 100) -> NormalityStats:
    """Moments and the KS distance of standardized values to N(0, 1)."""
    x = np.asarray(values, dtype=float).ravel()
    if len(x) < min_size:
        raise DomainError(f"normality diagnostics need at least {min_size} values, got {len(x)}")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise DomainError("values have zero variance")
    zs = (x - x.mean()) / sd
    return NormalityStats(
        float(x.mean()), float(sd), float(stats.skew(zs)), float(stats.kurtosis(zs)),
        float(stats.kstest(zs, "norm").statistic),
    )


# --------------------------------------------------------------------------------------
# Output

RECORD_FIELDS = ["method", "K", "N", "lambda", "sigma_z", "S", "sup_bias", "sup_sd", "sup_mse", "wall_time_s"]


def write_records_csv(results: Sequence[ExperimentResult], path, include_timing: bool = False):
    """One row per result. Wall time is left blank unless requested, so seeded runs
    produce byte-identical files."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
        writer.writeheader()
        for r in results:
            row = {k: (repr(v) if isinstance(v, float) else v) for k, v in r.record().items()}
            if not include_timing:
                row["wall_time_s"] = ""
            writer.writerow(row)


def write_pointwise_csv(result: ExperimentResult, path):
    grid = result.grid if result.grid.ndim == 1 else [";".join(map(repr, p)) for p in result.grid]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z", "bias", "var", "mse"])
        for z, b, v, m in zip(grid, result.bias, result.var, result.mse):
            writer.writerow([z if isinstance(z, str) else repr(float(z)), repr(float(b)), repr(float(v)), repr(float(m))])


def write_rates_csv(fits: dict, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["statistic", "alpha", "rho", "r_squared"])
        for name, fit in fits.items():
            writer.writerow([name, repr(fit.alpha), repr(fit.rho), repr(fit.r_squared)])


def write_bundle_json(results: Sequence[ExperimentResult], fits: dict, path):
    payload = {
        "results": [r.to_dict() for r in results],
        "rates": {k: asdict(v) for k, v in fits.items()},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
