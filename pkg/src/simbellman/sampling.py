"""Importance samplers, Radon-Nikodym weights and their normalization.

Randomness comes from counter-based Philox streams keyed by ``(seed, *key)``, so the
draws for a given (replication, evaluation point, decision) do not depend on the order
in which they are generated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, WeightDegeneracy
from .model import ModelSpec, as_states, decision_table, increment_density, sample_transition

EULER_GAMMA = np.euler_gamma


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class DrawSet:
    """Monte Carlo draws plus the sampler that produced them.

    ``draws`` has shape ``(M, D, N, d_z)`` for the conditional sampler (one set of
    next states per evaluation point and decision) and ``(N, d_z)`` for the marginal
    sampler, whose draws are shared by all points and decisions. ``shocks`` holds
    optional centred extreme-value taste shocks of shape ``(P, n_eps, D)``, drawn
    independently for each evaluation point (conditional) or each draw (marginal).
    """

    kind: str
    draws: np.ndarray
    n: int
    seed: Optional[int] = None
    eval_points: Optional[np.ndarray] = None
    z_max: Optional[float] = None
    shocks: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("conditional", "marginal"):
            raise DomainError(f"unknown sampler kind {self.kind!r}")
        expected_axis = 2 if self.kind == "conditional" else 0
        if self.draws.shape[expected_axis] != self.n:
            raise DomainError("draw count does not match n")

    @property
    def n_eps(self) -> int:
        return 0 if self.shocks is None else self.shocks.shape[1]

    @property
    def unit_weights(self) -> bool:
        """Conditional draws come from the transition law itself, so every weight is 1."""
        return self.kind == "conditional"

    def with_shocks(self, shocks) -> "DrawSet":
        return DrawSet(self.kind, self.draws, self.n, self.seed, self.eval_points, self.z_max,
                       None if shocks is None else np.asarray(shocks, dtype=float))


SHOCK_STREAM = 2**20


def draw_shocks(n_eps: int, n_decisions: int, n_points: int, seed: int, key=()) -> np.ndarray:
    """Extreme-value shocks centred to mean zero, one independent set per point.

    Centring makes ``E[max(r + eps)]`` equal the log-sum-exp. Shape ``(n_points, n_eps, D)``.
    """
    if n_eps < 1:
        raise DomainError("need at least one shock draw")
    out = np.empty((n_points, n_eps, n_decisions))
    for m in range(n_points):
        out[m] = substream(seed, *key, m, SHOCK_STREAM).gumbel(size=(n_eps, n_decisions))
    return out - EULER_GAMMA


def draw_conditional(spec: ModelSpec, eval_points, n: int, seed: int, key=(), n_eps=None) -> DrawSet:
    """Draw ``n`` next states from the transition law for each point and decision."""
    if n < 1:
        raise DomainError("need at least one draw")
    points = as_states(spec, eval_points).reshape(-1, spec.d_z)
    if len(points) < 1:
        raise DomainError("need at least one evaluation point")
    D = spec.n_decisions
    draws = np.empty((len(points), D, n, spec.d_z))
    for m, z in enumerate(points):
        for d in range(D):
            draws[m, d] = sample_transition(spec, z, d, substream(seed, *key, m, d), size=n)
    shocks = None if not n_eps else draw_shocks(n_eps, D, len(points), seed, key)
    return DrawSet("conditional", draws, n, seed, points, None, shocks)


def draw_marginal_uniform(n: int, z_max: float, seed: int, d_z: int = 1, key=(), n_eps=None,
                          n_decisions=None) -> DrawSet:
    """``n`` i.i.d. uniform draws on ``[0, z_max]^d_z`` shared by every point and decision."""
    if n < 1:
        raise DomainError("need at least one draw")
    if z_max <= 0:
        raise DomainError(f"z_max must be positive, got {z_max}")
    draws = substream(seed, *key).uniform(0.0, z_max, size=(n, d_z))
    shocks = None
    if n_eps:
        shocks = draw_shocks(n_eps, n_decisions or 2 ** d_z, n, seed, key)
    return DrawSet("marginal", draws, n, seed, None, float(z_max), shocks)


def normalized_weights(weight_values):
    """Divide non-negative weights by their sum along the last axis."""
    w = np.asarray(weight_values, dtype=float)
    if np.any(w < 0) or np.any(~np.isfinite(w)):
        raise DomainError("importance weights must be finite and non-negative")
    total = w.sum(axis=-1, keepdims=True)
    if np.any(total == 0):
        bad = np.argwhere(total[..., 0] == 0) if w.ndim > 1 else None
        raise WeightDegeneracy("importance weights sum to zero", rows=bad)
    return w / total


def weight_fn(spec: ModelSpec, z_next, post_states):
    """Unnormalized weight of next states relative to a uniform marginal sampler.

    Evaluates ``pi * 1{z' = x} + (1 - pi) f_+(z'|x)`` per dimension and multiplies;
    the constant uniform density cancels on normalization and is dropped. The
    indicator uses exact floating-point equality. Shapes broadcast; the trailing
    axis is the state dimension.
    """
    z_next = np.asarray(z_next, dtype=float)
    x = np.asarray(post_states, dtype=float)
    per_dim = (1 - spec.pi) * increment_density(spec, z_next, x)
    if spec.pi:
        per_dim = per_dim + spec.pi * (z_next == x)
    return np.prod(per_dim, axis=-1)


def marginal_raw_weights(spec: ModelSpec, draws: DrawSet, points, d=None) -> np.ndarray:
    """Unnormalized weights of the shared draws seen from ``points``.

    Returns ``(M, D, N)``, or ``(M, N)`` when a single decision ``d`` is requested.
    """
    if draws.kind != "marginal":
        raise DomainError("marginal weights need a marginal DrawSet")
    points = as_states(spec, points).reshape(-1, spec.d_z)
    if d is None:
        return np.stack(
            [marginal_raw_weights(spec, draws, points, k) for k in range(spec.n_decisions)], axis=1
        )
    bits = decision_table(spec.d_z)[int(d)]
    post = np.where(bits == 1, 0.0, points)  # (M, d_z)
    # replacement collapses many points onto the same post-decision state
    uniq, inverse = np.unique(post, axis=0, return_inverse=True)
    rows = weight_fn(spec, draws.draws[None, :, :], uniq[:, None, :])
    return rows if len(uniq) == len(post) and np.array_equal(uniq, post) else rows[inverse.reshape(-1)]


def self_approx_weight_matrix(spec: ModelSpec, draws: DrawSet, d) -> np.ndarray:
    """Row-normalized ``N x N`` weights; row k holds the weights seen from draw k."""
    raw = marginal_raw_weights(spec, draws, draws.draws, d)
    total = raw.sum(axis=1)
    rows = np.flatnonzero(total == 0)
    if len(rows):
        raise WeightDegeneracy(
            f"decision {int(d)}: {len(rows)} weight rows are all zero (first: {rows[0]})", rows=rows
        )
    raw /= total[:, None]
    return raw


def self_approx_weight_tensor(spec: ModelSpec, draws: DrawSet) -> np.ndarray:
    """Normalized weights for all decisions, shape ``(N, D, N)``."""
    return np.stack(
        [self_approx_weight_matrix(spec, draws, d) for d in range(spec.n_decisions)], axis=1
    )
