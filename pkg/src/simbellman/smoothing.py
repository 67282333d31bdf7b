"""Log-sum-exp surrogate of the max and its derivatives.

All functions reduce over the last axis, so they apply row-wise to stacked inputs.
``lam = 0`` gives the hard max; its gradient is the argmax indicator with ties going
to the lowest index.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

LAMBDA_BAR = 10.0


def check_lambda(lam: float, allow_zero: bool = True) -> float:
    lam = float(lam)
    if lam < 0 or (lam == 0 and not allow_zero):
        raise DomainError(f"smoothing parameter must be {'>=' if allow_zero else '>'} 0, got {lam}")
    if lam > LAMBDA_BAR:
        raise DomainError(f"smoothing parameter {lam} exceeds the cap {LAMBDA_BAR}")
    return lam


def _prepare(r):
    r = np.asarray(r, dtype=float)
    if r.ndim == 0 or r.shape[-1] == 0:
        raise DomainError("smooth max needs at least one alternative")
    return r


def smooth_max(r, lam: float):
    """``lam * log(sum(exp(r / lam)))``, evaluated after subtracting the max."""
    r = _prepare(r)
    lam = check_lambda(lam)
    top = r.max(axis=-1)
    if lam == 0:
        return top
    with np.errstate(under="ignore"):
        total = np.exp((r - top[..., None]) / lam).sum(axis=-1)
    return top + lam * np.log(total)


def smooth_max_grad(r, lam: float):
    """Softmax weights ``dG/dr``; they sum to one along the last axis."""
    r = _prepare(r)
    lam = check_lambda(lam)
    if lam == 0:
        out = np.zeros_like(r)
        np.put_along_axis(out, np.argmax(r, axis=-1)[..., None], 1.0, axis=-1)
        return out
    with np.errstate(under="ignore"):
        e = np.exp((r - r.max(axis=-1, keepdims=True)) / lam)
    return e / e.sum(axis=-1, keepdims=True)


def smooth_max_lambda_deriv(r, lam: float):
    """Derivative of the smooth max with respect to ``lam``."""
    r = _prepare(r)
    lam = check_lambda(lam, allow_zero=False)
    scaled = (r - r.max(axis=-1, keepdims=True)) / lam
    with np.errstate(under="ignore"):
        e = np.exp(scaled)
    total = e.sum(axis=-1)
    # exp underflow makes e * scaled = 0 * -inf-ish; those terms are exactly zero
    weighted = np.where(e > 0, e * scaled, 0.0).sum(axis=-1)
    return np.log(total) - weighted / total


def choice_probabilities(values, lam: float):
    """Logit choice probabilities for choice-specific values ``u + beta * V``."""
    check_lambda(lam, allow_zero=False)
    return smooth_max_grad(values, lam)
