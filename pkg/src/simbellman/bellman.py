"""Smoothed simulated Bellman operators and their differentials.

Two layers live here. The function-level operators (``apply_gamma_bar`` and friends)
take arbitrary callables and are convenient for checks. The solvers instead use
:class:`LinearContinuationSystem` and :class:`ExpectedValueSystem`, which cache every
draw-dependent quantity once so each iteration reduces to a few dense products.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, UnsupportedNonSmooth
from .model import ModelSpec, as_states, decision_table, utility_matrix
from .quadrature import beta_quadrature
from .sampling import DrawSet, marginal_raw_weights, normalized_weights
from .smoothing import check_lambda, smooth_max, smooth_max_grad

DEFAULT_QUADRATURE_NODES = 60


def next_utility(spec: ModelSpec, states) -> np.ndarray:
    """Utilities at next-period states, with states beyond the domain held at its edge.

    Sieve bases are flat outside the domain, so evaluating utilities at the clamped
    state keeps the expected-value and integrated-value formulations consistent.
    """
    states = np.clip(as_states(spec, states), spec.z_min, spec.z_max_domain)
    return utility_matrix(spec, states)


def _post_states(spec: ModelSpec, points: np.ndarray) -> np.ndarray:
    """Post-decision states for every point and decision, ``(M, D, d_z)``."""
    bits = decision_table(spec.d_z)
    return np.where(bits[None, :, :] == 1, 0.0, points[:, None, :])


@dataclass
class OperatorContext:
    """Everything an operator needs apart from the value function itself.

    ``lam`` is the extra smoothing used with simulated taste shocks; ``None`` means the
    shocks are integrated out analytically with scale ``spec.lambda_ev``.
    """

    spec: ModelSpec
    draws: DrawSet
    eval_points: Optional[np.ndarray] = None
    lam: Optional[float] = None
    _weights: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.eval_points is None:
            if self.draws.eval_points is None:
                raise DomainError("no evaluation points given")
            self.eval_points = self.draws.eval_points
        self.eval_points = as_states(self.spec, self.eval_points).reshape(-1, self.spec.d_z)
        if self.draws.kind == "conditional":
            ref = self.draws.eval_points
            if ref is None or ref.shape != self.eval_points.shape or not np.array_equal(ref, self.eval_points):
                raise DomainError("conditional draws only support the points they were drawn at")
        if self.lam is not None:
            check_lambda(self.lam)
            if self.draws.shocks is None:
                raise DomainError("simulated-shock smoothing needs taste-shock draws")
            if self.draws.shocks.shape[0] != self.M:
                raise DomainError("taste shocks must be drawn for each evaluation point")

    @property
    def M(self) -> int:
        return len(self.eval_points)

    def next_states(self) -> np.ndarray:
        """Next-state draws ``(M, D, N, d_z)`` (a broadcast view for marginal draws)."""
        if self.draws.kind == "conditional":
            return self.draws.draws
        D = self.spec.n_decisions
        return np.broadcast_to(self.draws.draws[None, None], (self.M, D) + self.draws.draws.shape)

    def weights(self) -> np.ndarray:
        """Normalized sampling weights ``(M, D, N)``."""
        if self._weights is None:
            if self.draws.kind == "conditional":
                D, n = self.spec.n_decisions, self.draws.n
                self._weights = np.full((self.M, D, n), 1.0 / n)
            else:
                raw = marginal_raw_weights(self.spec, self.draws, self.eval_points)
                self._weights = normalized_weights(raw)
        return self._weights

    def continuation(self, v: Callable) -> np.ndarray:
        """``sum_i v(Z_i) w_i`` for every point and decision, ``(M, D)``."""
        if self.draws.kind == "marginal":
            return np.einsum("mdn,n->md", self.weights(), v(self.draws.draws))
        return np.einsum("mdn,mdn->md", self.weights(), v(self.draws.draws))


def _shock_smax(r, spec, shocks, lam):
    """Average over shock draws of ``G_lam(r + lambda_ev * eps)`` and of its gradient.

    ``r`` is ``(M, D)`` and ``shocks`` ``(M, n_eps, D)``.
    """
    shifted = r[..., None, :] + spec.lambda_ev * shocks
    return smooth_max(shifted, lam).mean(axis=-1), smooth_max_grad(shifted, lam).mean(axis=-2)


def apply_gamma_bar(ctx: OperatorContext, v: Callable) -> np.ndarray:
    """Integrated-value operator with analytically integrated extreme-value shocks."""
    U = utility_matrix(ctx.spec, ctx.eval_points)
    return smooth_max(U + ctx.spec.beta * ctx.continuation(v), ctx.spec.lambda_ev)


def apply_gamma_bar_simulated_shocks(ctx: OperatorContext, v: Callable) -> np.ndarray:
    """Integrated-value operator averaging a ``lam``-smoothed max over simulated shocks."""
    if ctx.lam is None or ctx.draws.shocks is None:
        raise DomainError("context has no simulated shocks / smoothing parameter")
    U = utility_matrix(ctx.spec, ctx.eval_points)
    value, _ = _shock_smax(U + ctx.spec.beta * ctx.continuation(v), ctx.spec, ctx.draws.shocks, ctx.lam)
    return value


def gamma_bar_differential(ctx: OperatorContext, v: Callable, dv: Callable) -> np.ndarray:
    """Directional derivative of the integrated-value operator at ``v`` along ``dv``."""
    U = utility_matrix(ctx.spec, ctx.eval_points)
    r = U + ctx.spec.beta * ctx.continuation(v)
    if ctx.lam is None:
        probs = smooth_max_grad(r, ctx.spec.lambda_ev)
    else:
        if ctx.lam == 0:
            raise UnsupportedNonSmooth("the hard-max operator has no differential")
        _, probs = _shock_smax(r, ctx.spec, ctx.draws.shocks, ctx.lam)
    return ctx.spec.beta * np.sum(probs * ctx.continuation(dv), axis=-1)


def _vector_continuation(ctx: OperatorContext, V: Callable, smooth: bool):
    spec = ctx.spec
    Z = ctx.draws.draws
    inner = next_utility(spec, Z) + spec.beta * V(Z)  # (..., N, D)
    G = smooth_max(inner, spec.lambda_ev)
    w = ctx.weights()
    if ctx.draws.kind == "marginal":
        out = np.einsum("mdn,n->md", w, G)
    else:
        out = np.einsum("mdn,mdn->md", w, G)
    return out, (smooth_max_grad(inner, spec.lambda_ev) if smooth else None)


def apply_gamma(ctx: OperatorContext, V: Callable) -> np.ndarray:
    """Expected-value operator: ``(M, D)`` values ``sum_i w_i G(u(Z_i) + beta V(Z_i))``."""
    return _vector_continuation(ctx, V, smooth=False)[0]


def gamma_differential(ctx: OperatorContext, V: Callable, dV: Callable) -> np.ndarray:
    """Directional derivative of the expected-value operator, ``(M, D)``."""
    _, probs = _vector_continuation(ctx, V, smooth=True)
    inner = np.sum(probs * dV(ctx.draws.draws), axis=-1)
    w = ctx.weights()
    if ctx.draws.kind == "marginal":
        return ctx.spec.beta * np.einsum("mdn,n->md", w, inner)
    return ctx.spec.beta * np.einsum("mdn,mdn->md", w, inner)


def quadrature_rule(spec: ModelSpec, n_nodes: int = DEFAULT_QUADRATURE_NODES):
    """Increments and probabilities for one dimension: the atom at 0 comes first."""
    y, w = beta_quadrature(n_nodes, spec.a, spec.b)
    inc = np.concatenate([[0.0], spec.sigma_z * y])
    prob = np.concatenate([[spec.pi], (1 - spec.pi) * w])
    return inc, prob


def quadrature_next_states(spec: ModelSpec, points, n_nodes: int = DEFAULT_QUADRATURE_NODES):
    """Deterministic next states ``(M, D, Q, d_z)`` and probabilities ``(Q,)``.

    For ``d_z > 1`` the rule is the tensor product of the univariate rules.
    """
    points = as_states(spec, points).reshape(-1, spec.d_z)
    inc, prob = quadrature_rule(spec, n_nodes)
    grids = np.meshgrid(*([inc] * spec.d_z), indexing="ij")
    incs = np.stack([g.reshape(-1) for g in grids], axis=-1)
    probs = np.prod(np.meshgrid(*([prob] * spec.d_z), indexing="ij"), axis=0).reshape(-1)
    post = _post_states(spec, points)
    return post[:, :, None, :] + incs[None, None], probs


def apply_gamma_bar_quadrature(spec: ModelSpec, v: Callable, eval_points,
                               n_nodes: int = DEFAULT_QUADRATURE_NODES) -> np.ndarray:
    """Deterministic integrated-value operator using Gauss-Jacobi quadrature."""
    points = as_states(spec, eval_points).reshape(-1, spec.d_z)
    Z, p = quadrature_next_states(spec, points, n_nodes)
    cont = v(Z) @ p
    return smooth_max(utility_matrix(spec, points) + spec.beta * cont, spec.lambda_ev)


def apply_gamma_quadrature(spec: ModelSpec, V: Callable, eval_points,
                           n_nodes: int = DEFAULT_QUADRATURE_NODES) -> np.ndarray:
    """Deterministic expected-value operator, ``(M, D)``."""
    Z, p = quadrature_next_states(spec, eval_points, n_nodes)
    G = smooth_max(next_utility(spec, Z) + spec.beta * V(Z), spec.lambda_ev)
    return G @ p


# --------------------------------------------------------------------------------------
# Matrix-form systems used by the solvers


@dataclass
class LinearContinuationSystem:
    """Integrated-value fixed point ``x = A Gbar(x)`` with continuation linear in ``x``.

    At evaluation point m and decision d the continuation is ``E[m, d] @ x``. The
    unknown ``x`` is a coefficient vector (sieve, ``A`` the least-squares map) or the
    nodal values themselves (self-approximation, ``A`` is None).
    """

    U: np.ndarray  # (M, D)
    E: np.ndarray  # (M, D, n)
    beta: float
    lambda_ev: float
    A: Optional[np.ndarray] = None  # (n, M)
    shocks: Optional[np.ndarray] = None  # (M, n_eps, D)
    lam: Optional[float] = None

    def __post_init__(self):
        if self.shocks is not None and self.lam is None:
            raise DomainError("simulated shocks need a smoothing parameter")

    @property
    def size(self) -> int:
        return self.E.shape[-1]

    @property
    def smooth(self) -> bool:
        return self.shocks is None or self.lam > 0

    def _inner(self, x):
        return self.U + self.beta * (self.E @ x)

    def _g(self, r, grad: bool):
        if self.shocks is None:
            g = smooth_max(r, self.lambda_ev)
            return g, (smooth_max_grad(r, self.lambda_ev) if grad else None)
        shifted = r[:, None, :] + self.lambda_ev * self.shocks
        g = smooth_max(shifted, self.lam).mean(axis=1)
        return g, (smooth_max_grad(shifted, self.lam).mean(axis=1) if grad else None)

    def pointwise(self, x) -> np.ndarray:
        """Operator image at the evaluation points (before projection)."""
        return self._g(self._inner(x), grad=False)[0]

    def image(self, x) -> np.ndarray:
        g = self.pointwise(x)
        return g if self.A is None else self.A @ g

    def image_and_jacobian(self, x):
        if not self.smooth:
            raise UnsupportedNonSmooth("Newton steps need a positive smoothing parameter")
        g, P = self._g(self._inner(x), grad=True)
        J = self.beta * np.einsum("md,mdn->mn", P, self.E)
        if self.A is None:
            return g, J
        return self.A @ g, self.A @ J


@dataclass
class ExpectedValueSystem:
    """Expected-value fixed point for coefficients ``alpha`` of shape ``(K, D)``.

    ``Unext`` ``(M, D, Q, D)`` and ``Bnext`` ``(M, D, Q, K)`` hold utilities and basis
    values at the next states, ``W`` ``(M, D, Q)`` their normalized weights; ``A`` maps
    values at the M points to coefficients.
    """

    Unext: np.ndarray
    Bnext: np.ndarray
    W: np.ndarray
    beta: float
    lambda_ev: float
    A: np.ndarray

    @property
    def K(self) -> int:
        return self.Bnext.shape[-1]

    @property
    def D(self) -> int:
        return self.Unext.shape[-1]

    @property
    def size(self) -> int:
        return self.K * self.D

    def _inner(self, alpha):
        return self.Unext + self.beta * (self.Bnext @ alpha)

    def image(self, x) -> np.ndarray:
        alpha = x.reshape(self.K, self.D)
        G = smooth_max(self._inner(alpha), self.lambda_ev)
        vals = np.einsum("mdq,mdq->md", self.W, G)
        return (self.A @ vals).reshape(-1)

    def image_and_jacobian(self, x):
        alpha = x.reshape(self.K, self.D)
        r = self._inner(alpha)
        G = smooth_max(r, self.lambda_ev)
        P = smooth_max_grad(r, self.lambda_ev)  # (M, D, Q, D')
        vals = np.einsum("mdq,mdq->md", self.W, G)
        # d vals[m, d] / d alpha[k, e]
        dv = self.beta * np.einsum("mdq,mdqe,mdqk->mdke", self.W, P, self.Bnext)
        J = np.einsum("jm,mdke->jdke", self.A, dv).reshape(self.size, self.size)
        return (self.A @ vals).reshape(-1), J


# --------------------------------------------------------------------------------------
# Builders


def sieve_system(ctx: OperatorContext, basis: Callable, A: np.ndarray) -> LinearContinuationSystem:
    """Integrated-value sieve system; ``basis`` maps states ``(..., d_z)`` to ``(..., K)``."""
    w = ctx.weights()
    if ctx.draws.kind == "marginal":
        E = np.einsum("mdn,nk->mdk", w, basis(ctx.draws.draws))
    else:
        E = np.einsum("mdn,mdnk->mdk", w, basis(ctx.draws.draws))
    return LinearContinuationSystem(
        utility_matrix(ctx.spec, ctx.eval_points), E, ctx.spec.beta, ctx.spec.lambda_ev, A,
        ctx.draws.shocks if ctx.lam is not None else None, ctx.lam,
    )


def self_approx_system(spec: ModelSpec, draws: DrawSet, weights: np.ndarray,
                       lam: Optional[float] = None) -> LinearContinuationSystem:
    """Nodal system on the marginal draws; ``weights`` is the ``(N, D, N)`` tensor."""
    return LinearContinuationSystem(
        utility_matrix(spec, draws.draws), weights, spec.beta, spec.lambda_ev, None,
        draws.shocks if lam is not None else None, lam,
    )


def quadrature_sieve_system(spec: ModelSpec, univariate_basis: Callable, points, A,
                            n_nodes: int = DEFAULT_QUADRATURE_NODES) -> LinearContinuationSystem:
    """Exact-form integrated-value system with a (tensor) sieve and quadrature.

    ``univariate_basis`` maps scalars to ``(..., J)``; for two dimensions the expected
    basis factorizes into a Kronecker product of univariate expectations, which keeps
    the cost linear in the number of quadrature nodes.
    """
    points = as_states(spec, points).reshape(-1, spec.d_z)
    inc, prob = quadrature_rule(spec, n_nodes)
    post = _post_states(spec, points)  # (M, D, d_z)
    per_dim = np.einsum("q,...qj->...j", prob, univariate_basis(post[..., None] + inc))  # (M, D, d_z, J)
    E = per_dim[..., 0, :]
    for i in range(1, spec.d_z):
        E = (E[..., :, None] * per_dim[..., i, None, :]).reshape(E.shape[:-1] + (-1,))
    return LinearContinuationSystem(utility_matrix(spec, points), E, spec.beta, spec.lambda_ev, A)


def expected_value_system(spec: ModelSpec, basis: Callable, next_states, weights, A) -> ExpectedValueSystem:
    """Expected-value sieve system from next states ``(M, D, Q, d_z)`` and weights ``(M, D, Q)``."""
    next_states = np.asarray(next_states, dtype=float)
    W = np.broadcast_to(np.asarray(weights, dtype=float), next_states.shape[:-1])
    return ExpectedValueSystem(
        next_utility(spec, next_states), basis(next_states), W, spec.beta, spec.lambda_ev, A
    )
