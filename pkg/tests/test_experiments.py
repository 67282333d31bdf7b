import json

import numpy as np
import pytest

from simbellman.errors import DomainError, SimBellmanError, SolverError
from simbellman.experiments import (
    ExperimentConfig, coefficient_report, default_grid, exact_reference, fit_rate,
    normality_diagnostic, run_replications, smoothing_sweep, write_bundle_json,
    write_pointwise_csv, write_rates_csv, write_records_csv,
)
from simbellman.model import ModelSpec
from simbellman.solver import SolverConfig

SMALL = ExperimentConfig(J=4, n=40, S=4, grid_points=50)


def test_default_grid():
    assert default_grid(ModelSpec()).shape == (500,)
    g = default_grid(ModelSpec(d_z=2))
    assert g.shape == (256, 2) and g.min() == 0 and g.max() == 1000


def test_exact_reference_is_a_fixed_point():
    ref = exact_reference(ModelSpec())
    assert ref.residual < 1e-10 and ref.space.J == 60
    add = exact_reference(ModelSpec(d_z=2))
    z = np.array([[100.0, 700.0]])
    assert add(z)[0] == pytest.approx(ref(np.array([100.0]))[0] + ref(np.array([700.0]))[0])
    with pytest.raises(DomainError):
        coefficient_report(np.zeros(5), 2)


def test_replications_are_reproducible_and_thread_independent():
    a = run_replications(SMALL)
    b = run_replications(SMALL.with_(threads=3))
    np.testing.assert_array_equal(a.values, b.values)
    assert a.bias.shape == (50,) and np.all(a.var >= 0)
    np.testing.assert_allclose(a.mse, a.bias**2 + a.var)
    assert a.sup_sd == pytest.approx(np.sqrt(a.var.max()))


def test_self_approx_replications():
    cfg = SMALL.with_(method="self_approx", n=200, spec=ModelSpec(sigma_z=100))
    res = run_replications(cfg)
    assert res.n_failed == 0 and res.sup_bias < 5


def test_failure_budget():
    def flaky(config, rep, grid):
        if rep == 1:
            raise SolverError("boom")
        return np.zeros(len(grid))

    with pytest.raises(SimBellmanError):
        run_replications(SMALL, replicate=flaky)
    res = run_replications(SMALL.with_(S=200), replicate=flaky, reference=lambda g: np.zeros(len(g)))
    assert res.n_failed == 1 and res.sup_bias == 0


def test_config_validation():
    with pytest.raises(DomainError):
        ExperimentConfig(method="x")
    with pytest.raises(DomainError):
        ExperimentConfig(S=1)
    assert ExperimentConfig(lam=0.0).solver_config().method == "sa"
    assert ExperimentConfig().K == 10 and ExperimentConfig(method="self_approx", n=7).K == 7


def test_smoothing_sweep_pairs():
    out = smoothing_sweep(SMALL.with_(n_eps=20), [0.0, 0.5])
    assert [lam for lam, _ in out] == [0.0, 0.5] and all(m > 0 for _, m in out)


def test_fit_rate_recovers_power_law():
    n = np.array([100, 200, 500, 1000])
    fit = fit_rate(n, 3.0 * n**-0.5)
    assert fit.rho == pytest.approx(-0.5) and fit.alpha == pytest.approx(np.log(3.0))
    assert fit.r_squared == pytest.approx(1.0)
    with pytest.warns(RuntimeWarning):
        fit_rate([1, 2, 3, 4], [1.0, 0.5, 0.3, 0.0])
    with pytest.raises(DomainError):
        fit_rate([1, 2, 2], [1, 2, 3])


def test_normality_diagnostic():
    x = np.random.default_rng(0).normal(5, 2, size=5000)
    st = normality_diagnostic(x)
    assert abs(st.skewness) < 0.1 and abs(st.excess_kurtosis) < 0.2 and st.ks < 0.02
    skewed = normality_diagnostic(np.random.default_rng(0).exponential(size=5000))
    assert skewed.skewness > 1.5
    with pytest.raises(DomainError):
        normality_diagnostic(np.ones(200))
    with pytest.raises(DomainError):
        normality_diagnostic(np.ones(20))


def test_writers_are_deterministic(tmp_path):
    res = [run_replications(SMALL), run_replications(SMALL.with_(n=60))]
    fits = {}
    for tag in ("a", "b"):
        write_records_csv(res, tmp_path / f"{tag}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "method,K,N,lambda,sigma_z,S,sup_bias,sup_sd,sup_mse,wall_time_s"
    write_pointwise_csv(res[0], tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().startswith("z,bias,var,mse")
    fits["sup_sd"] = fit_rate([1, 2, 4], [1, 0.7, 0.5])
    write_rates_csv(fits, tmp_path / "r.csv")
    write_bundle_json(res, fits, tmp_path / "all.json")
    data = json.loads((tmp_path / "all.json").read_text())
    assert len(data["results"]) == 2 and "sup_sd" in data["rates"]
