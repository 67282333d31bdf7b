"""Linear sieves: truncated Chebyshev and clamped B-spline bases, tensor products and
the least-squares projector onto their span."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.optimize import minimize_scalar

from .errors import DomainError, SingularProjection

GRAM_CONDITION_WARNING = 1e12


def _check_interval(z_min, z_max):
    if not z_max > z_min:
        raise DomainError(f"need z_max > z_min, got [{z_min}, {z_max}]")


def chebyshev_basis(z, J: int, z_min: float, z_max: float) -> np.ndarray:
    """First ``J`` Chebyshev polynomials on ``[z_min, z_max]``, shape ``(..., J)``.

    Outside the interval the k-th function is held at its boundary value
    ``sign(T)^(k-1)``, so the extension is flat and continuous.
    """
    if J < 1:
        raise DomainError("need at least one basis function")
    _check_interval(z_min, z_max)
    t = 2.0 * (np.asarray(z, dtype=float) - z_min) / (z_max - z_min) - 1.0
    t = np.clip(t, -1.0, 1.0)
    out = np.empty(t.shape + (J,))
    out[..., 0] = 1.0
    if J > 1:
        out[..., 1] = t
    for k in range(2, J):
        out[..., k] = 2.0 * t * out[..., k - 1] - out[..., k - 2]
    return out


def chebyshev_nodes(M: int, z_min: float = -1.0, z_max: float = 1.0) -> np.ndarray:
    """Roots of the degree-M Chebyshev polynomial mapped to the interval, ascending."""
    if M < 1:
        raise DomainError("need at least one node")
    _check_interval(z_min, z_max)
    j = np.arange(1, M + 1)
    t = np.cos((2 * j - 1) * np.pi / (2 * M))[::-1]
    return z_min + (t + 1.0) * (z_max - z_min) / 2.0


def chebyshev_extrema(M: int, z_min: float = -1.0, z_max: float = 1.0) -> np.ndarray:
    """Extrema of the degree-(M-1) Chebyshev polynomial (endpoints included), ascending.

    A single node is placed at ``z_min``.
    """
    if M < 1:
        raise DomainError("need at least one node")
    _check_interval(z_min, z_max)
    if M == 1:
        return np.array([float(z_min)])
    t = -np.cos(np.pi * np.arange(M) / (M - 1))
    return z_min + (t + 1.0) * (z_max - z_min) / 2.0


def bspline_knots(J: int, k: int) -> np.ndarray:
    """Clamped equidistant knots on [0, 1]: ``J + k + 1`` entries."""
    if k < 0:
        raise DomainError(f"invalid B-spline degree {k}")
    if J < k + 1:
        raise DomainError(f"degree {k} needs at least {k + 1} basis functions, got {J}")
    inner = np.linspace(0.0, 1.0, J - k + 1)
    return np.concatenate([np.zeros(k), inner, np.ones(k)])


def _cox_de_boor(x: np.ndarray, knots: np.ndarray, J: int, k: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n_int = len(knots) - 1
    # degree 0: half-open intervals, with x = 1 assigned to the last non-empty one
    B = ((knots[:-1] <= x[..., None]) & (x[..., None] < knots[1:])).astype(float)
    last = np.flatnonzero(knots[:-1] < knots[1:])[-1]
    B[..., last] += (x == knots[-1]).astype(float)
    for deg in range(1, k + 1):
        nxt = np.zeros(x.shape + (n_int - deg,))
        for i in range(n_int - deg):
            left = knots[i + deg] - knots[i]
            right = knots[i + deg + 1] - knots[i + 1]
            term = 0.0
            if left > 0:
                term = term + (x - knots[i]) / left * B[..., i]
            if right > 0:
                term = term + (knots[i + deg + 1] - x) / right * B[..., i + 1]
            nxt[..., i] = term
        B = nxt
    return B[..., :J]


def bspline_basis(z, J: int, k: int, z_min: float, z_max: float) -> np.ndarray:
    """``J`` B-splines of degree ``k`` on clamped equidistant knots over the interval.

    Arguments outside the interval are clamped to the nearest endpoint.
    """
    if int(k) != k or k < 0:
        raise DomainError(f"invalid B-spline degree {k}")
    _check_interval(z_min, z_max)
    knots = bspline_knots(J, int(k))
    t = np.clip((np.asarray(z, dtype=float) - z_min) / (z_max - z_min), 0.0, 1.0)
    return _cox_de_boor(t, knots, J, int(k))


def universal_nodes(J: int, k: int) -> np.ndarray:
    """Interpolation nodes on [0, 1]: the maximizer of each B-spline (first J knots for k = 0)."""
    knots = bspline_knots(J, k)
    if k == 0:
        return knots[:J].copy()
    nodes = np.empty(J)
    for i in range(J):
        lo, hi = knots[i], knots[i + k + 1]
        if i == 0:
            nodes[i] = 0.0
            continue
        if i == J - 1:
            nodes[i] = 1.0
            continue
        res = minimize_scalar(
            lambda x: -_cox_de_boor(np.array(x), knots, J, k)[i],
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-13},
        )
        nodes[i] = res.x
    return nodes


@dataclass(frozen=True)
class SieveSpace:
    """Tensor-product basis with ``J`` functions per dimension (``K = J**d_z`` in total).

    ``order`` is the B-spline degree and is ignored for Chebyshev. ``node_rule`` picks
    the default Chebyshev design points: ``"extrema"`` (endpoints included) or
    ``"roots"``.
    """

    family: str = "chebyshev"
    J: int = 10
    order: int = 2
    z_min: float = 0.0
    z_max: float = 1000.0
    d_z: int = 1
    node_rule: str = "extrema"

    def __post_init__(self):
        if self.node_rule not in ("extrema", "roots"):
            raise DomainError(f"unknown node rule {self.node_rule!r}")
        if self.family not in ("chebyshev", "bspline"):
            raise DomainError(f"unknown basis family {self.family!r}")
        if self.J < 1:
            raise DomainError("need at least one basis function")
        if self.d_z not in (1, 2):
            raise DomainError("tensor bases are supported for d_z <= 2")
        _check_interval(self.z_min, self.z_max)
        if self.family == "bspline":
            bspline_knots(self.J, self.order)

    @property
    def K(self) -> int:
        return self.J ** self.d_z

    @property
    def knots(self) -> Optional[np.ndarray]:
        if self.family != "bspline":
            return None
        return self.z_min + (self.z_max - self.z_min) * bspline_knots(self.J, self.order)

    def univariate(self, z) -> np.ndarray:
        if self.family == "chebyshev":
            return chebyshev_basis(z, self.J, self.z_min, self.z_max)
        return bspline_basis(z, self.J, self.order, self.z_min, self.z_max)

    def basis(self, states) -> np.ndarray:
        """Basis values ``(..., K)``.

        ``states`` has a trailing axis of length ``d_z``; in one dimension a plain array
        of scalars is accepted too.
        """
        states = np.asarray(states, dtype=float)
        if self.d_z == 1:
            if states.ndim >= 2 and states.shape[-1] == 1:
                states = states[..., 0]
            return self.univariate(states)
        return tensor_basis(states, [self] * self.d_z)

    def univariate_nodes(self, M: Optional[int] = None) -> np.ndarray:
        M = self.J if M is None else M
        if self.family == "chebyshev":
            rule = chebyshev_extrema if self.node_rule == "extrema" else chebyshev_nodes
            return rule(M, self.z_min, self.z_max)
        if M != self.J:
            return np.linspace(self.z_min, self.z_max, M)
        return self.z_min + (self.z_max - self.z_min) * universal_nodes(self.J, self.order)

    def design_points(self, M: Optional[int] = None) -> np.ndarray:
        """Design points ``(M**d_z, d_z)``: Cartesian product of per-dimension nodes."""
        nodes = self.univariate_nodes(M)
        grids = np.meshgrid(*([nodes] * self.d_z), indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=-1)


def tensor_basis(states, spaces) -> np.ndarray:
    """All products of per-dimension basis values, ordered lexicographically in (j1, ..., jd)."""
    states = np.asarray(states, dtype=float)
    if states.shape[-1] != len(spaces):
        raise DomainError("state dimension does not match the number of factor spaces")
    out = spaces[0].univariate(states[..., 0])
    for i, space in enumerate(spaces[1:], start=1):
        other = space.univariate(states[..., i])
        out = (out[..., :, None] * other[..., None, :]).reshape(states.shape[:-1] + (-1,))
    return out


@dataclass
class SieveFunction:
    """``z -> coef' B_K(z)``; ``coef`` is ``(K,)`` or ``(K, D)`` for vector-valued functions."""

    space: SieveSpace
    coef: np.ndarray

    def __call__(self, states) -> np.ndarray:
        return self.space.basis(states) @ self.coef


@dataclass
class Projector:
    """Least-squares projection onto a sieve given values at fixed design points."""

    space: SieveSpace
    design_points: np.ndarray
    B: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.design_points = np.asarray(self.design_points, dtype=float).reshape(-1, self.space.d_z)
        self.B = self.space.basis(self.design_points)
        M, K = self.B.shape
        if M < K:
            raise SingularProjection(f"{M} design points cannot identify {K} coefficients")
        gram = self.B.T @ self.B
        try:
            self._chol = cho_factor(gram, lower=True)
        except LinAlgError as exc:
            raise SingularProjection("Gram matrix is not positive definite") from exc
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond):
            raise SingularProjection("Gram matrix is singular")
        if cond > GRAM_CONDITION_WARNING:
            warnings.warn(f"ill-conditioned Gram matrix (cond={cond:.3g})", RuntimeWarning)

    @classmethod
    def for_space(cls, space: SieveSpace, M: Optional[int] = None) -> "Projector":
        return cls(space, space.design_points(M))

    @property
    def M(self) -> int:
        return self.B.shape[0]

    @cached_property
    def matrix(self) -> np.ndarray:
        """``(B'B)^{-1} B'``, mapping design-point values to coefficients, shape ``(K, M)``."""
        return cho_solve(self._chol, self.B.T)

    @cached_property
    def P(self) -> np.ndarray:
        """Grid-restricted projector ``B (B'B)^{-1} B'`` of shape ``(M, M)``."""
        return self.B @ self.matrix

    def coefficients(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.M:
            raise DomainError(f"expected {self.M} design-point values, got {values.shape[0]}")
        return cho_solve(self._chol, self.B.T @ values)


def project(projector: Projector, values):
    """Least-squares coefficients and the fitted function for design-point values."""
    coef = projector.coefficients(values)
    return coef, SieveFunction(projector.space, coef)


def projector_sup_norm(projector: Projector) -> float:
    """Max absolute row sum of the grid-restricted projector; at most 1 means non-expansive."""
    return float(np.abs(projector.P).sum(axis=1).max())
