"""Optimal replacement model: utilities, Beta-mixture transitions, multivariate extensions.

States are arrays whose trailing axis has length ``d_z``. A composite decision is an
integer index in ``range(2**d_z)`` whose binary digits (most significant first) are the
per-dimension choices, 0 = keep and 1 = replace.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.special import betaln

from .errors import DomainError

KEEP = 0
REPLACE = 1


@dataclass(frozen=True)
class ModelSpec:
    """Parameters of the (possibly multivariate) replacement model.

    Utilities are negated costs: keeping at usage z yields ``-theta_c * 0.001 * z`` and
    replacing yields ``-rc`` (plus the cost at zero usage, which is zero).
    """

    beta: float = 0.95
    rc: float = 10.0
    theta_c: float = 2.0
    lambda_ev: float = 1.0
    sigma_z: float = 15.0
    a: float = 2.0
    b: float = 5.0
    pi: float = 1e-9
    d_z: int = 1
    kappa: float = 0.0
    z_min: float = 0.0
    z_max_domain: float = 1000.0

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise DomainError(f"beta must lie in (0, 1), got {self.beta}")
        if self.rc < 0:
            raise DomainError(f"rc must be non-negative, got {self.rc}")
        if self.lambda_ev <= 0:
            raise DomainError(f"lambda_ev must be positive, got {self.lambda_ev}")
        if self.sigma_z <= 0:
            raise DomainError(f"sigma_z must be positive, got {self.sigma_z}")
        if self.a <= 0 or self.b <= 0:
            raise DomainError(f"Beta shapes must be positive, got a={self.a}, b={self.b}")
        if not 0.0 <= self.pi < 1.0:
            raise DomainError(f"pi must lie in [0, 1), got {self.pi}")
        if int(self.d_z) != self.d_z or self.d_z < 1:
            raise DomainError(f"d_z must be a positive integer, got {self.d_z}")
        if self.kappa != 0 and self.d_z != 2:
            raise DomainError("the interaction term is defined for d_z = 2 only")
        if self.z_max_domain <= self.z_min:
            raise DomainError("z_max_domain must exceed z_min")

    @property
    def n_decisions(self) -> int:
        return 2 ** self.d_z

    def replace(self, **changes) -> "ModelSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        return cls(**data)


@dataclass(frozen=True)
class Decision:
    """A composite decision: one keep/replace bit per state dimension."""

    bits: tuple

    @property
    def index(self) -> int:
        return decision_index(self.bits)

    @classmethod
    def from_index(cls, index: int, d_z: int) -> "Decision":
        return cls(tuple(int(b) for b in decision_bits(index, d_z)))


def decision_bits(index: int, d_z: int) -> np.ndarray:
    if not 0 <= index < 2 ** d_z:
        raise DomainError(f"decision index {index} out of range for d_z={d_z}")
    return np.array([(index >> (d_z - 1 - i)) & 1 for i in range(d_z)], dtype=int)


def decision_index(bits) -> int:
    index = 0
    for bit in bits:
        if bit not in (0, 1):
            raise DomainError(f"decision bits must be 0 or 1, got {bits}")
        index = 2 * index + int(bit)
    return index


def decision_table(d_z: int) -> np.ndarray:
    """``(2**d_z, d_z)`` array of bits, row ``d`` describing composite decision ``d``."""
    return np.array([decision_bits(d, d_z) for d in range(2 ** d_z)], dtype=int)


def as_states(spec: ModelSpec, z) -> np.ndarray:
    """Coerce scalars, vectors or arrays of states to shape ``(..., d_z)``."""
    z = np.asarray(z, dtype=float)
    if spec.d_z == 1 and (z.ndim < 2 or z.shape[-1] != 1):
        z = z[..., None]
    if z.shape[-1] != spec.d_z:
        raise DomainError(f"states must have trailing dimension {spec.d_z}, got shape {z.shape}")
    return z


def _as_bits(spec: ModelSpec, d) -> np.ndarray:
    if isinstance(d, Decision):
        bits = np.array(d.bits, dtype=int)
    elif np.ndim(d) == 0:
        bits = decision_bits(int(d), spec.d_z)
    else:
        bits = np.asarray(d, dtype=int)
    if bits.shape != (spec.d_z,):
        raise DomainError(f"decision does not match d_z={spec.d_z}: {d}")
    return bits


def univariate_utilities(spec: ModelSpec, z) -> np.ndarray:
    """``(..., 2)`` array of (keep, replace) utilities for scalar usage levels ``z``."""
    z = np.asarray(z, dtype=float)
    keep = -spec.theta_c * 0.001 * z
    replace = np.full_like(keep, -spec.rc)
    return np.stack([keep, replace], axis=-1)


def utility_matrix(spec: ModelSpec, states) -> np.ndarray:
    """Per-period utilities of every composite decision, shape ``(..., 2**d_z)``.

    No domain check is made, so this can be applied to simulated next-period states.
    """
    states = as_states(spec, states)
    table = decision_table(spec.d_z)
    per_dim = univariate_utilities(spec, states)  # (..., d_z, 2)
    # pick u(z_i, d_i) for every composite decision: (..., D, d_z)
    picked = np.stack(
        [per_dim[..., np.arange(spec.d_z), table[d]] for d in range(spec.n_decisions)], axis=-2
    )
    total = picked.sum(axis=-1)
    if spec.kappa:
        total = total - spec.kappa * picked[..., 0] * picked[..., 1]
    return total


def per_period_utility(spec: ModelSpec, z, d) -> float:
    """Utility of decision ``d`` (index, bit sequence or :class:`Decision`) at state ``z``."""
    states = as_states(spec, z)
    if np.any(states < 0):
        raise DomainError(f"state components must be non-negative, got {z}")
    bits = _as_bits(spec, d)
    return float(utility_matrix(spec, states)[..., decision_index(bits)].reshape(-1)[0])


def post_decision_states(spec: ModelSpec, states, d) -> np.ndarray:
    """Replacement regenerates usage to zero before the next increment."""
    states = as_states(spec, states)
    bits = _as_bits(spec, d)
    return np.where(bits == REPLACE, 0.0, states)


def beta_pdf(x, a: float, b: float):
    """Beta(a, b) density on the open unit interval, zero elsewhere."""
    if a <= 0 or b <= 0:
        raise DomainError(f"Beta shapes must be positive, got a={a}, b={b}")
    x = np.asarray(x, dtype=float)
    inside = (x > 0) & (x < 1)
    xs = np.where(inside, x, 0.5)
    logpdf = (a - 1) * np.log(xs) + (b - 1) * np.log1p(-xs) - betaln(a, b)
    out = np.where(inside, np.exp(logpdf), 0.0)
    return float(out) if out.ndim == 0 else out


def increment_density(spec: ModelSpec, z_next, x):
    """Continuous part f_+(z'|x): scaled Beta density of the usage increment."""
    u = (np.asarray(z_next, dtype=float) - np.asarray(x, dtype=float)) / spec.sigma_z
    return beta_pdf(u, spec.a, spec.b) / spec.sigma_z


def transition_density(spec: ModelSpec, z_next, z, d) -> float:
    """Density of the next state w.r.t. the mixed (atom + Lebesgue) reference measure.

    Per dimension this is ``pi`` when ``z_next`` equals the post-decision state and the
    scaled Beta density times ``1 - pi`` otherwise; dimensions multiply.
    """
    z_next = as_states(spec, z_next)
    x = post_decision_states(spec, z, d)
    per_dim = np.where(
        z_next == x, spec.pi, (1 - spec.pi) * increment_density(spec, z_next, x)
    )
    return float(np.prod(per_dim, axis=-1).reshape(-1)[0])


def sample_transition(spec: ModelSpec, z, d, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw next-period states; returns shape ``(*size, d_z)`` (``(d_z,)`` if size is None)."""
    x = post_decision_states(spec, z, d).reshape(spec.d_z)
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (spec.d_z,)
    increments = spec.sigma_z * rng.beta(spec.a, spec.b, size=shape)
    stay = rng.random(shape) < spec.pi
    return x + np.where(stay, 0.0, increments)
