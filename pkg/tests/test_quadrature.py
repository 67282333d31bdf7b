import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import roots_jacobi

from simbellman.errors import DomainError
from simbellman.quadrature import beta_quadrature


@pytest.mark.parametrize("n", [1, 2, 7, 60])
@pytest.mark.parametrize("ab", [(2, 5), (1, 1), (0.5, 3.5)])
def test_matches_scipy_gauss_jacobi(n, ab):
    a, b = ab
    x, w = beta_quadrature(n, a, b)
    t, v = roots_jacobi(n, b - 1, a - 1)
    np.testing.assert_allclose(x, (t + 1) / 2, atol=1e-13)
    np.testing.assert_allclose(w, v / v.sum(), rtol=1e-10, atol=1e-15)


@given(st.integers(1, 20), st.floats(0.3, 8), st.floats(0.3, 8))
def test_exact_moments(n, a, b):
    x, w = beta_quadrature(n, a, b)
    assert abs(w.sum() - 1) < 1e-12
    for k in range(0, min(2 * n, 12)):
        exact = np.prod([(a + i) / (a + b + i) for i in range(k)])
        assert np.isclose(w @ x**k, exact, rtol=1e-10, atol=1e-15)


def test_invalid():
    with pytest.raises(DomainError):
        beta_quadrature(0, 2, 5)
    with pytest.raises(DomainError):
        beta_quadrature(3, -1, 5)
