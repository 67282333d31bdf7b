import csv
import dataclasses

import numpy as np
import pytest

from simbellman.bellman import OperatorContext, next_utility
from simbellman.errors import (
    DomainError, MaxIterations, SingularJacobian, SolverDiverged, UnsupportedNonSmooth, WeightDegeneracy,
)
from simbellman.model import ModelSpec, utility_matrix
from simbellman.sampling import draw_conditional, draw_marginal_uniform
from simbellman.sieve import SieveSpace
from simbellman.smoothing import smooth_max
from simbellman.solver import (
    IterationLog, SolverConfig, evaluate_self_approx, solve, solve_nk_self_approx, solve_nk_sieve,
    solve_self_approx, solve_sieve, solve_sieve_expected,
)


class Affine:
    """``T(x) = a x + b``, a scalar test system."""

    def __init__(self, a, b=1.0, n=3):
        self.a, self.b, self.size = a, b, n

    def image(self, x):
        return self.a * x + self.b

    def image_and_jacobian(self, x):
        return self.image(x), self.a * np.eye(self.size)


@pytest.fixture
def sieve_setup(spec):
    space = SieveSpace("chebyshev", 6)
    draws = draw_conditional(spec, space.design_points(), 100, seed=21)
    return space, OperatorContext(spec, draws)


def test_config_validation():
    with pytest.raises(DomainError):
        SolverConfig(method="bfgs")
    with pytest.raises(DomainError):
        SolverConfig(tol=0)
    assert SolverConfig().with_(tol=1e-3).tol == 1e-3


def test_affine_fixed_point_all_methods():
    for method in ("sa", "nk", "hybrid"):
        x, log = solve(Affine(0.5), np.zeros(3), SolverConfig(method=method))
        np.testing.assert_allclose(x, 2.0, atol=1e-11)
    x, log = solve(Affine(0.5), np.zeros(3), SolverConfig(method="nk"))
    assert log.count("nk") == 2  # one Newton step solves a linear system exactly


def test_failures():
    with pytest.raises(SolverDiverged):
        solve(Affine(1.5), np.zeros(3), SolverConfig(method="sa"))
    with pytest.raises(SingularJacobian):
        solve(Affine(1.0), np.zeros(3), SolverConfig(method="nk"))
    with pytest.raises(MaxIterations):
        solve(Affine(0.999), np.zeros(3), SolverConfig(method="sa", max_iter_sa=50))


def test_log_csv(tmp_path):
    _, log = solve(Affine(0.5), np.zeros(3), SolverConfig(method="hybrid"))
    log.to_csv(tmp_path / "it.csv")
    rows = list(csv.reader(open(tmp_path / "it.csv")))
    assert rows[0] == ["iter", "method", "residual", "wall_time_ms"]
    assert len(rows) == log.count() + 1
    assert IterationLog().final_residual == float("inf")


def test_sieve_methods_agree(sieve_setup):
    space, ctx = sieve_setup
    sols = {m: solve_sieve(ctx, space, SolverConfig(method=m)) for m in ("sa", "nk", "hybrid")}
    for m in ("nk", "hybrid"):
        np.testing.assert_allclose(sols[m].coef, sols["sa"].coef, atol=1e-10)
    nk = solve_nk_sieve(ctx, space)
    assert nk.log.count("sa") == 0 and nk.log.final_residual <= 1e-12


def test_expected_and_integrated_sieves_are_consistent(sieve_setup, spec):
    space, ctx = sieve_setup
    exp_sol = solve_sieve_expected(ctx, space)
    assert exp_sol.coef.shape == (space.K, 2)
    v = solve_sieve(ctx, space)
    pts = ctx.eval_points
    # each form carries its own K=6 approximation error, so agreement is only approximate
    G = smooth_max(utility_matrix(spec, pts) + spec.beta * exp_sol(pts), spec.lambda_ev)
    np.testing.assert_allclose(G, v(pts), atol=2e-2)


def test_nk_rejects_hard_max(spec):
    space = SieveSpace("chebyshev", 3)
    draws = draw_conditional(spec, space.design_points(), 20, seed=1, n_eps=20)
    ctx = OperatorContext(spec, draws, lam=0.0)
    with pytest.raises(UnsupportedNonSmooth):
        solve_sieve(ctx, space, SolverConfig(method="hybrid"))
    sol = solve_sieve(ctx, space, SolverConfig(method="sa"))
    assert sol.log.count("nk") == 0


@pytest.fixture(scope="module")
def self_approx():
    spec = ModelSpec(sigma_z=100)
    draws = draw_marginal_uniform(300, 1000.0, seed=31)
    return spec, draws, solve_self_approx(spec, draws)


def test_self_approx_nodal_identity(self_approx):
    spec, draws, sol = self_approx
    np.testing.assert_allclose(sol(draws.draws[:10]), sol.values[:10], atol=1e-12)
    sa = solve_self_approx(spec, draws, SolverConfig(method="sa"))
    nk = solve_nk_self_approx(spec, draws)
    np.testing.assert_allclose(sa.values, sol.values, atol=1e-10)
    np.testing.assert_allclose(nk.values, sol.values, atol=1e-10)


def test_self_approx_off_grid_equation(self_approx):
    spec, draws, sol = self_approx
    z = np.array([123.4, 567.8])
    v = sol(z)
    # re-evaluating the defining equation with the computed value reproduces it
    from simbellman.sampling import marginal_raw_weights
    raw = marginal_raw_weights(spec, draws, z)
    atom = np.zeros_like(raw[..., 0])
    atom[:, 0] = spec.pi
    cont = (raw @ sol.values + atom * v[:, None]) / (raw.sum(-1) + atom)
    np.testing.assert_allclose(v, smooth_max(utility_matrix(spec, z) + spec.beta * cont, 1.0), atol=1e-10)
    assert np.all(np.diff(sol(np.linspace(0, 900, 30))) < 0.5)


def test_self_approx_expected_kind(self_approx):
    spec, draws, sol = self_approx
    V = solve_self_approx(spec, draws, kind="expected")
    assert V.values.shape == (300, 2)
    G = smooth_max(next_utility(spec, draws.draws) + spec.beta * V.values, 1.0)
    np.testing.assert_allclose(G, sol.values, atol=1e-9)
    assert V(np.array([500.0])).shape == (1, 2)
    with pytest.raises(DomainError):
        solve_self_approx(spec, draws, kind="other")


def test_self_approx_guards(self_approx):
    spec, draws, sol = self_approx
    with pytest.raises(MemoryError):
        solve_self_approx(spec, draws, SolverConfig(max_nodes=10))
    with pytest.raises(DomainError):
        solve_self_approx(spec, draw_conditional(spec, [1.0], 5, 1))
    shocked = draw_marginal_uniform(100, 1000.0, seed=3, n_eps=50)
    s2 = solve_self_approx(spec, shocked, lam=0.2)
    with pytest.raises(DomainError):
        s2(np.array([10.0]))
    # with no point mass, a state beyond every draw has no keep-weight
    bare = dataclasses.replace(sol, spec=spec.replace(pi=0.0))
    with pytest.raises(WeightDegeneracy):
        bare(np.array([999.9 + 0.05]))
