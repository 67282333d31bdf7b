import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.polynomial import chebyshev as C
from scipy.interpolate import BSpline

from simbellman.errors import DomainError, SingularProjection
from simbellman.sieve import (
    Projector, SieveSpace, bspline_basis, bspline_knots, chebyshev_basis, chebyshev_extrema,
    chebyshev_nodes, project, projector_sup_norm, tensor_basis, universal_nodes,
)


def test_chebyshev_matches_numpy():
    z = np.linspace(0, 1000, 101)
    B = chebyshev_basis(z, 8, 0, 1000)
    t = z / 500 - 1
    for k in range(8):
        np.testing.assert_allclose(B[:, k], C.chebval(t, np.eye(8)[k]), atol=1e-12)


def test_chebyshev_flat_extension():
    B = chebyshev_basis(np.array([-5.0, 1200.0]), 5, 0, 1000)
    np.testing.assert_allclose(B[0], [1, -1, 1, -1, 1])
    np.testing.assert_allclose(B[1], 1.0)


def test_nodes():
    r = chebyshev_nodes(4, 0, 1)
    np.testing.assert_allclose(np.sort((C.chebroots(np.eye(5)[4]) + 1) / 2), r, atol=1e-14)
    e = chebyshev_extrema(5, 0, 10)
    assert e[0] == 0 and e[-1] == 10 and np.all(np.diff(e) > 0)
    assert chebyshev_extrema(1, 3, 4).tolist() == [3.0]
    with pytest.raises(DomainError):
        chebyshev_nodes(0)


@pytest.mark.parametrize("J,k", [(3, 0), (5, 1), (7, 2), (9, 3)])
def test_bspline_matches_scipy(J, k):
    t = bspline_knots(J, k)
    padded = np.concatenate([[0.0], t, [1.0]]) if k == 0 else t
    x = np.linspace(0, 1, 203)[:-1]
    ours = bspline_basis(x, J, k, 0, 1)
    for j in range(J):
        ref = BSpline(t, np.eye(J)[j], k, extrapolate=False)(x)
        np.testing.assert_allclose(ours[:, j], np.nan_to_num(ref), atol=1e-12)


@given(st.integers(1, 12), st.integers(0, 3), st.floats(0, 1))
def test_bspline_partition_of_unity(extra, k, x):
    J = k + extra
    B = bspline_basis(np.array([x]), J, k, 0, 1)
    assert abs(B.sum() - 1) < 1e-12 and B.min() >= 0


def test_bspline_clamped_outside():
    np.testing.assert_allclose(bspline_basis(np.array([-1.0, 2.0]), 5, 2, 0, 1),
                               bspline_basis(np.array([0.0, 1.0]), 5, 2, 0, 1))
    with pytest.raises(DomainError):
        bspline_knots(2, 3)


def test_universal_nodes_maximize_each_function():
    nodes = universal_nodes(6, 2)
    B = bspline_basis(nodes, 6, 2, 0, 1)
    assert np.all(np.argmax(B, axis=1) == np.arange(6))
    assert nodes[0] == 0 and nodes[-1] == 1


def test_tensor_basis_ordering():
    space = SieveSpace("chebyshev", 3, d_z=2, z_max=1.0)
    z = np.array([[0.2, 0.7]])
    b1 = chebyshev_basis(0.2, 3, 0, 1)
    b2 = chebyshev_basis(0.7, 3, 0, 1)
    np.testing.assert_allclose(space.basis(z)[0], np.outer(b1, b2).ravel())
    assert space.design_points().shape == (9, 2)
    with pytest.raises(DomainError):
        tensor_basis(np.zeros((2, 3)), [space, space])


def test_space_validation():
    for kwargs in [dict(family="fourier"), dict(J=0), dict(d_z=3), dict(node_rule="x"),
                   dict(z_min=5, z_max=5)]:
        with pytest.raises(DomainError):
            SieveSpace(**kwargs)


def test_projection_reproduces_members():
    space = SieveSpace("chebyshev", 5)
    proj = Projector.for_space(space, 20)
    coef = np.arange(1.0, 6.0)
    fitted, f = project(proj, space.basis(proj.design_points) @ coef)
    np.testing.assert_allclose(fitted, coef, atol=1e-10)
    np.testing.assert_allclose(proj.P @ proj.P, proj.P, atol=1e-12)
    assert f(np.array([250.0])).shape == (1,)


def test_singular_projection():
    with pytest.raises(SingularProjection):
        Projector(SieveSpace("chebyshev", 5), np.linspace(0, 1000, 3))
    with pytest.raises(SingularProjection):
        Projector(SieveSpace("chebyshev", 3), np.array([1.0, 1.0, 1.0, 1.0]))


def test_projector_norms():
    assert projector_sup_norm(Projector(SieveSpace("chebyshev", 1), chebyshev_nodes(64, 0, 1000))) == pytest.approx(1.0, abs=1e-14)
    # interpolation with piecewise-linear splines at the knots is non-expansive
    sp = SieveSpace("bspline", 6, order=1)
    assert projector_sup_norm(Projector.for_space(sp)) == pytest.approx(1.0, abs=1e-12)
    assert projector_sup_norm(Projector(SieveSpace("chebyshev", 4), chebyshev_nodes(64, 0, 1000))) > 1.7
