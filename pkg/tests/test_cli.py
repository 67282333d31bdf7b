import json

import numpy as np
import pytest

from simbellman.cli import RunConfig, load_solution, main, save_solution
from simbellman.model import ModelSpec


def run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


def test_defaults_round_trip():
    cfg = RunConfig()
    assert cfg.spec() == ModelSpec()
    assert RunConfig.model_validate(json.loads(cfg.model_dump_json())) == cfg


@pytest.mark.parametrize("method", ["sieve", "self-approx"])
def test_solve_and_reload_bit_for_bit(tmp_path, capsys, method):
    out = tmp_path / method
    code, io = run(["solve", "--method", method, "--n", "150", "--out-dir", str(out),
                    "--set", "model.sigma_z=100"], capsys)
    assert code == 0, io.err
    sol = load_solution(out / "solution.json")
    save_solution(sol, ModelSpec(sigma_z=100), tmp_path / "again.json")
    a = json.loads((out / "solution.json").read_text())
    b = json.loads((tmp_path / "again.json").read_text())
    a.pop("final_residual"), b.pop("final_residual")
    assert a == b
    z = np.array([250.0, 750.0])
    assert np.all(np.isfinite(sol(z)))
    assert (out / "iterations.csv").read_text().startswith("iter,method,residual,wall_time_ms")


def test_config_errors_exit_2(tmp_path, capsys):
    code, io = run(["solve", "--set", "model.beta=1.5"], capsys)
    assert code == 2 and "model.beta" in io.err
    code, io = run(["solve", "--set", "solver.bogus=1"], capsys)
    assert code == 2 and "solver.bogus" in io.err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["solve", "--config", str(bad)], capsys)[0] == 2
    assert run(["solve", "--config", str(tmp_path / "missing.json")], capsys)[0] == 2
    assert run(["solve", "--set", "model.kappa=0.05"], capsys)[0] == 2


def test_numeric_failure_exit_3(tmp_path, capsys):
    code, io = run(["solve", "--n", "20", "--out-dir", str(tmp_path), "--set", "solver.method=\"sa\"",
                    "--set", "solver.max_iter_sa=3"], capsys)
    assert code == 3 and "MaxIterations" in io.err


def test_config_file_and_flags(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"method": {"J": 4, "n": 30}, "experiment": {"seed": 5}}))
    code, _ = run(["solve", "--config", str(cfg), "--seed", "6", "--out-dir", str(tmp_path / "o")], capsys)
    assert code == 0
    assert json.loads((tmp_path / "o" / "solution.json").read_text())["space"]["J"] == 4


def test_experiment_and_rates(tmp_path, capsys):
    out = tmp_path / "exp"
    code, io = run(["experiment", "--out-dir", str(out), "--set", "method.J=4", "--set", "experiment.S=3",
                    "--set", "experiment.n_schedule=[30,60,120]", "--set", "experiment.grid_points=40"], capsys)
    assert code == 0, io.err
    for name in ("records.csv", "rates.csv", "results.json", "pointwise_N60.csv"):
        assert (out / name).exists()
    code, io = run(["rates", str(out / "records.csv"), "--statistic", "sup_sd"], capsys)
    assert code == 0 and "rho" in io.out
    code, io = run(["rates", str(out / "records.csv"), "--statistic", "nope"], capsys)
    assert code == 4
    assert run(["rates", str(tmp_path / "none.csv")], capsys)[0] == 4
    one = tmp_path / "one.csv"
    one.write_text("N,sup_sd\n100,0.1\n")
    assert run(["rates", str(one)], capsys)[0] == 4


def test_experiment_rerun_is_byte_identical(tmp_path, capsys):
    args = ["experiment", "--set", "method.J=3", "--set", "experiment.S=3", "--set", "method.n=25",
            "--set", "experiment.n_schedule=[25]", "--set", "experiment.grid_points=20"]
    for tag in ("a", "b"):
        assert run(args + ["--out-dir", str(tmp_path / tag)], capsys)[0] == 0
    assert (tmp_path / "a" / "records.csv").read_bytes() == (tmp_path / "b" / "records.csv").read_bytes()


@pytest.mark.parametrize("nodes", ["roots", "extrema", "uniform"])
def test_norm_check(capsys, nodes):
    code, io = run(["norm-check", "--K", "1", "--M", "64", "--nodes", nodes], capsys)
    assert code == 0
    out = json.loads(io.out)
    assert out["norm"] == pytest.approx(1.0) and out["verdict"] == "non-expansive"


def test_exact(tmp_path, capsys):
    code, _ = run(["exact", "--out-dir", str(tmp_path)], capsys)
    assert code == 0
    data = json.loads((tmp_path / "exact.json").read_text())
    assert data["J"] == 60 and data["residual"] < 1e-10
