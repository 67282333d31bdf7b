"""Gauss-Jacobi rules for expectations under a Beta(a, b) law."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import DomainError


@lru_cache(maxsize=64)
def _golub_welsch(n: int, alpha: float, beta: float):
    # Jacobi matrix of the monic recurrence for the weight (1-t)^alpha (1+t)^beta on [-1, 1]
    k = np.arange(n, dtype=float)
    s = 2 * k + alpha + beta
    diag = np.empty(n)
    diag[0] = (beta - alpha) / (alpha + beta + 2)
    if n > 1:
        diag[1:] = (beta**2 - alpha**2) / (s[1:] * (s[1:] + 2))
    k1 = np.arange(1, n, dtype=float)
    s1 = 2 * k1 + alpha + beta
    off2 = 4 * k1 * (k1 + alpha) * (k1 + beta) * (k1 + alpha + beta) / (s1**2 * (s1 + 1) * (s1 - 1))
    if n > 1:
        # k = 1 has a removable 0/0 when alpha + beta = -1
        off2[0] = 4 * (1 + alpha) * (1 + beta) / ((2 + alpha + beta) ** 2 * (3 + alpha + beta))
    nodes, vecs = eigh_tridiagonal(diag, np.sqrt(off2))
    weights = vecs[0] ** 2
    return nodes, weights / weights.sum()


def beta_quadrature(n: int, a: float, b: float):
    """Nodes on (0, 1) and probability weights exact for polynomials of degree < 2n.

    ``sum(w * f(x))`` approximates ``E f(X)`` for ``X ~ Beta(a, b)``.
    """
    if n < 1:
        raise DomainError("need at least one quadrature node")
    if a <= 0 or b <= 0:
        raise DomainError("Beta shapes must be positive")
    t, w = _golub_welsch(int(n), float(b) - 1.0, float(a) - 1.0)
    return (t + 1.0) / 2.0, w.copy()
