"""Command-line interface.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure, 4 bad input data.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .bellman import OperatorContext
from .errors import DomainError, SimBellmanError, SingularProjection, SolverError, WeightDegeneracy
from .experiments import (
    ExperimentConfig,
    exact_reference,
    fit_rate,
    run_replications,
    write_bundle_json,
    write_pointwise_csv,
    write_rates_csv,
    write_records_csv,
)
from .model import ModelSpec
from .sampling import DrawSet, draw_conditional, draw_marginal_uniform
from .sieve import Projector, SieveSpace, chebyshev_extrema, chebyshev_nodes, projector_sup_norm
from .solver import SelfApproxSolution, SieveSolution, SolverConfig, solve_self_approx, solve_sieve

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DATA = 0, 2, 3, 4

log = logging.getLogger("simbellman")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    beta: float = Field(0.95, gt=0, lt=1)
    rc: float = Field(10.0, ge=0)
    theta_c: float = 2.0
    lambda_ev: float = Field(1.0, gt=0)
    sigma_z: float = Field(15.0, gt=0)
    a: float = Field(2.0, gt=0)
    b: float = Field(5.0, gt=0)
    pi: float = Field(1e-9, ge=0, lt=1)
    d_z: int = Field(1, ge=1, le=2)
    kappa: float = 0.0
    z_min: float = 0.0
    z_max_domain: float = 1000.0


class MethodSection(_Section):
    kind: Literal["sieve", "self-approx"] = "sieve"
    family: Literal["chebyshev", "bspline"] = "chebyshev"
    J: int = Field(10, ge=1)
    order: int = Field(2, ge=0)
    M: Optional[int] = Field(None, ge=1)
    node_rule: Literal["extrema", "roots"] = "extrema"
    lam: Optional[float] = Field(None, ge=0, le=10)
    n: int = Field(500, ge=1)
    n_eps: Optional[int] = Field(None, ge=1)
    z_max: float = Field(1000.0, gt=0)


class SolverSection(_Section):
    tol: float = Field(1e-12, gt=0)
    max_iter_sa: int = Field(100_000, ge=0)
    max_iter_nk: int = Field(50, ge=0)
    switch_residual: float = 1.0
    switch_iter: int = Field(20, ge=0)
    method: Literal["sa", "nk", "hybrid"] = "hybrid"
    divergence_window: int = Field(10, ge=1)
    divergence_factor: float = Field(10.0, gt=1)
    max_nodes: int = Field(20_000, ge=1)


class ExperimentSection(_Section):
    S: int = Field(200, ge=2)
    n_schedule: List[int] = Field(default_factory=lambda: [500])
    lambdas: Optional[List[float]] = None
    grid_points: Optional[int] = Field(None, ge=2)
    seed: int = 20240101
    threads: int = Field(1, ge=1)


class OutputSection(_Section):
    out_dir: str = "results"


class RunConfig(_Section):
    model: ModelSection = ModelSection()
    method: MethodSection = MethodSection()
    solver: SolverSection = SolverSection()
    experiment: ExperimentSection = ExperimentSection()
    output: OutputSection = OutputSection()

    def spec(self) -> ModelSpec:
        return ModelSpec(**self.model.model_dump())

    def solver_config(self) -> SolverConfig:
        return SolverConfig(**self.solver.model_dump())

    def space(self) -> SieveSpace:
        m = self.method
        return SieveSpace(m.family, m.J, m.order, self.model.z_min, self.model.z_max_domain,
                          self.model.d_z, m.node_rule)

    def experiment_config(self, n: int, lam=None) -> ExperimentConfig:
        m, e = self.method, self.experiment
        if m.node_rule != "extrema":
            raise DomainError("experiments use the default (extrema) Chebyshev design points")
        return ExperimentConfig(
            spec=self.spec(), method="sieve" if m.kind == "sieve" else "self_approx",
            family=m.family, J=m.J, order=m.order, M=m.M, n=n, n_eps=m.n_eps,
            lam=m.lam if lam is None else lam, z_max=m.z_max, S=e.S, seed=e.seed,
            grid_points=e.grid_points, threads=e.threads, solver=self.solver_config(),
        )


def _set_leaf(data: dict, dotted: str, raw: str):
    keys = dotted.split(".")
    if len(keys) != 2:
        raise DomainError(f"override keys look like section.field, got {dotted!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    data.setdefault(keys[0], {})[keys[1]] = value


def load_config(path: Optional[str], overrides=()) -> RunConfig:
    data = {}
    if path:
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise DomainError("the config file must hold a JSON object")
    for dotted, raw in overrides:
        _set_leaf(data, dotted, raw)
    return RunConfig.model_validate(data)


# --------------------------------------------------------------------------------------
# Solution files


def save_solution(solution, spec: ModelSpec, path):
    """Write a solution as JSON; floats use shortest round-trip repr, so reloads are exact."""
    if isinstance(solution, SieveSolution):
        s = solution.space
        payload = {
            "type": "sieve", "kind": solution.kind, "model": spec.to_dict(),
            "space": {"family": s.family, "J": s.J, "order": s.order, "z_min": s.z_min,
                      "z_max": s.z_max, "d_z": s.d_z, "node_rule": s.node_rule},
            "coef": np.asarray(solution.coef).tolist(),
            "final_residual": solution.log.final_residual,
        }
    else:
        d = solution.draws
        payload = {
            "type": "self-approx", "kind": solution.kind, "model": spec.to_dict(),
            "z_max": d.z_max, "seed": d.seed, "draws": d.draws.tolist(),
            "values": np.asarray(solution.values).tolist(), "lam": solution.lam,
            "final_residual": solution.log.final_residual,
        }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_solution(path):
    """Rebuild a callable solution from :func:`save_solution` output."""
    from .solver import IterationLog

    with open(path) as fh:
        payload = json.load(fh)
    spec = ModelSpec.from_dict(payload["model"])
    if payload["type"] == "sieve":
        space = SieveSpace(**payload["space"])
        return SieveSolution(np.array(payload["coef"]), space, IterationLog(), payload["kind"])
    draws = np.array(payload["draws"], dtype=float)
    ds = DrawSet("marginal", draws, len(draws), payload["seed"], None, payload["z_max"])
    return SelfApproxSolution(np.array(payload["values"]), ds, spec, IterationLog(), payload["kind"],
                              payload.get("lam"))


# --------------------------------------------------------------------------------------
# Commands


def cmd_solve(cfg: RunConfig) -> int:
    spec, solver_cfg, m = cfg.spec(), cfg.solver_config(), cfg.method
    seed = cfg.experiment.seed
    n_eps = (m.n_eps or m.n) if m.lam is not None else None
    if m.lam == 0 and solver_cfg.method != "sa":
        solver_cfg = solver_cfg.with_(method="sa")
    if m.kind == "sieve":
        space = cfg.space()
        draws = draw_conditional(spec, space.design_points(m.M), m.n, seed, n_eps=n_eps)
        solution = solve_sieve(OperatorContext(spec, draws, lam=m.lam), space, solver_cfg)
    else:
        draws = draw_marginal_uniform(m.n, m.z_max, seed, spec.d_z, n_eps=n_eps,
                                      n_decisions=spec.n_decisions)
        solution = solve_self_approx(spec, draws, solver_cfg, lam=m.lam)
    out = Path(cfg.output.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_solution(solution, spec, out / "solution.json")
    solution.log.to_csv(out / "iterations.csv")
    print(f"converged: final residual {solution.log.final_residual:.3e} after "
          f"{solution.log.count()} iterations; wrote {out / 'solution.json'}")
    return EXIT_OK


def cmd_experiment(cfg: RunConfig) -> int:
    out = Path(cfg.output.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    e = cfg.experiment
    results = []
    reference = exact_reference(cfg.spec())
    lambdas = e.lambdas if e.lambdas is not None else [None]
    for lam in lambdas:
        for n in e.n_schedule:
            res = run_replications(cfg.experiment_config(n, lam), reference)
            results.append(res)
            tag = f"N{n}" + ("" if lam is None else f"_lam{lam:g}")
            write_pointwise_csv(res, out / f"pointwise_{tag}.csv")
            print(f"N={n} lambda={lam}: sup|bias|={res.sup_bias:.4g} sup sd={res.sup_sd:.4g} "
                  f"sup mse={res.sup_mse:.4g}")
    write_records_csv(results, out / "records.csv")
    fits = {}
    if len(set(e.n_schedule)) >= 3 and lambdas == [None]:
        ns = [r.config.n for r in results]
        fits = {"sup_bias": fit_rate(ns, [r.sup_bias for r in results]),
                "sup_sd": fit_rate(ns, [r.sup_sd for r in results])}
    write_rates_csv(fits, out / "rates.csv")
    write_bundle_json(results, fits, out / "results.json")
    return EXIT_OK


class DataError(Exception):
    pass


def cmd_rates(csv_path: str, statistics: List[str], out: Optional[str]) -> int:
    try:
        with open(csv_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {csv_path}: {exc}") from exc
    if not rows:
        raise DataError("the CSV has no data rows")
    fits = {}
    for stat in statistics:
        if stat not in rows[0] or "N" not in rows[0]:
            raise DataError(f"column {stat!r} (or N) missing from {csv_path}")
        try:
            ns = [float(r["N"]) for r in rows]
            ys = [float(r[stat]) for r in rows]
        except ValueError as exc:
            raise DataError(f"non-numeric entry in {csv_path}: {exc}") from exc
        try:
            fit = fit_rate(ns, ys)
        except DomainError as exc:
            raise DataError(str(exc)) from exc
        fits[stat] = {"alpha": fit.alpha, "rho": fit.rho, "r_squared": fit.r_squared}
    text = json.dumps(fits, indent=1)
    if out:
        Path(out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_norm_check(basis: str, K: int, M: int, nodes: str, order: int) -> int:
    space = SieveSpace(basis, K, order)
    if nodes == "roots":
        pts = chebyshev_nodes(M, space.z_min, space.z_max)
    elif nodes == "extrema":
        pts = chebyshev_extrema(M, space.z_min, space.z_max)
    else:
        pts = np.linspace(space.z_min, space.z_max, M)
    norm = projector_sup_norm(Projector(space, pts))
    verdict = "non-expansive" if norm <= 1 + 1e-12 else "possibly expansive"
    print(json.dumps({"basis": basis, "K": K, "M": M, "nodes": nodes, "norm": norm, "verdict": verdict}))
    return EXIT_OK


def cmd_exact(cfg: RunConfig) -> int:
    spec = cfg.spec()
    ref = exact_reference(spec)
    out = Path(cfg.output.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"model": spec.to_dict(), "J": ref.space.J, "additive": ref.additive,
               "coef": list(ref.coef), "residual": ref.residual}
    (out / "exact.json").write_text(json.dumps(payload))
    print(f"exact reference: J={ref.space.J}, residual {ref.residual:.3e}")
    return EXIT_OK


# --------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simbellman", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--method", choices=["sieve", "self-approx"])
        p.add_argument("--n", type=int, help="number of draws N")
        p.add_argument("--out-dir")
        p.add_argument("--threads", type=int)
        p.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE",
                       help="override any config leaf (value parsed as JSON when possible)")

    for name in ("solve", "experiment", "exact"):
        common(sub.add_parser(name))
    rates = sub.add_parser("rates")
    rates.add_argument("csv_path")
    rates.add_argument("--statistic", action="append", help="column to fit (default sup_bias and sup_sd)")
    rates.add_argument("--out")
    norm = sub.add_parser("norm-check")
    norm.add_argument("--basis", choices=["chebyshev", "bspline"], default="chebyshev")
    norm.add_argument("--K", "-K", type=int, required=True)
    norm.add_argument("--M", "-M", type=int, required=True)
    norm.add_argument("--nodes", choices=["roots", "extrema", "uniform"], default="roots")
    norm.add_argument("--order", type=int, default=2)
    return parser


def _overrides(args) -> list:
    pairs = []
    for item in args.set:
        if "=" not in item:
            raise DomainError(f"--set expects SECTION.FIELD=VALUE, got {item!r}")
        pairs.append(tuple(item.split("=", 1)))
    for flag, dotted in (("seed", "experiment.seed"), ("method", "method.kind"), ("n", "method.n"),
                         ("out_dir", "output.out_dir"), ("threads", "experiment.threads")):
        value = getattr(args, flag)
        if value is not None:
            pairs.append((dotted, json.dumps(value)))
    return pairs


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rates":
            return cmd_rates(args.csv_path, args.statistic or ["sup_bias", "sup_sd"], args.out)
        if args.command == "norm-check":
            return cmd_norm_check(args.basis, args.K, args.M, args.nodes, args.order)
        try:
            cfg = load_config(args.config, _overrides(args))
            cfg.spec()
            if cfg.method.kind == "sieve":
                cfg.space()
        except ValidationError as exc:
            for err in exc.errors():
                loc = ".".join(str(p) for p in err["loc"])
                print(f"config error: {loc}: {err['msg']}", file=sys.stderr)
            return EXIT_CONFIG
        except (DomainError, OSError, json.JSONDecodeError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return {"solve": cmd_solve, "experiment": cmd_experiment, "exact": cmd_exact}[args.command](cfg)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SingularProjection, WeightDegeneracy, SimBellmanError, ArithmeticError,
            MemoryError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
