"""Batch experiment driver.

Subcommands::

    coalgrid openloop  --config cfg.json --out results/
    coalgrid mpc       --seed 3 --scheme decentralised,limited_info --tpred 8
    coalgrid sweep     --config cfg.json   (axis and values come from the config)
    coalgrid generate  --seed 3 --n 8 --out scenario/
    coalgrid validate  scenario/

Experiment commands write ``report.csv``, ``summary.json`` and ``trace.csv``
into ``--out``.  Command-line flags override values from ``--config``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .admm import AdmmSettings
from .coalition import (CoalitionValues, FullInfoEvaluator, LimitedInfoEvaluator,
                        bottom_up_form, optimal_partition)
from .data import LoadError, Scenario, generate_scenario, load_scenario, save_scenario
from .model import BudgetExceeded, InputError
from .mpc import SCHEMES, MpcSettings, mpc_run

SWEEP_AXES = ("building_count", "coalition_size")


@dataclass(frozen=True)
class ExperimentConfig:
    schemes: tuple = ("decentralised", "limited_info")
    c_max: int = 6
    t_pred: int = 8
    penalty: float = 0.5
    residual_tol: float = 1e-5
    max_iters: int = 5000
    dual_tol: float | None = AdmmSettings.dual_tol
    scenario: str | None = None  # scenario directory; generated when None
    seed: int = 0
    n_buildings: int = 8
    horizon: int = 96
    producers: float = 0.5
    noise_sigma: float = 0.1
    exact_first: bool = True
    budget_secs: float = 3600.0
    partition_budget: int = 5000
    out: str = "results"
    sweep_axis: str = "coalition_size"
    sweep_values: tuple = (1, 2, 4)

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "sweep_values", tuple(int(v) for v in self.sweep_values))
        bad = [s for s in self.schemes if s not in SCHEMES]
        if bad or not self.schemes:
            raise InputError(f"unknown schemes {bad}; choose from {SCHEMES}")
        if self.c_max < 1:
            raise InputError("c_max must be at least 1")
        if not self.budget_secs > 0:
            raise InputError("budget must be positive")
        if self.t_pred < 0:
            raise InputError("t_pred must be non-negative")
        if self.sweep_axis not in SWEEP_AXES:
            raise InputError(f"sweep axis must be one of {SWEEP_AXES}")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"{path}: {exc}") from None
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise InputError(f"{path}: unknown keys {unknown}")
        return cls(**raw)

    def admm(self) -> AdmmSettings:
        return AdmmSettings(self.penalty, self.residual_tol, self.max_iters,
                            dual_tol=self.dual_tol)

    def load(self) -> Scenario:
        if self.scenario:
            return load_scenario(self.scenario)
        return generate_scenario(self.seed, self.n_buildings, self.horizon,
                                 self.producers, self.noise_sigma)


@dataclass
class Report:
    rows: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def costs(self) -> dict:
        return {r["scheme"]: r["cost"] for r in self.rows}

    def write(self, out) -> Path:
        root = Path(out)
        root.mkdir(parents=True, exist_ok=True)
        _write_rows(root / "report.csv", self.rows)
        _write_rows(root / "trace.csv", self.trace)
        (root / "summary.json").write_text(json.dumps(self.summary, indent=2) + "\n")
        return root


def _write_rows(path: Path, rows: list[dict]):
    with path.open("w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def _trace_rows(scheme: str, grid: np.ndarray, names) -> list[dict]:
    T, N = grid.shape
    return [{"scheme": scheme, "slot": t + 1, "building": names[i],
             "grid_total": float(grid[t, i])} for t in range(T) for i in range(N)]


def _openloop_scheme(scheme: str, scenario: Scenario, cfg: ExperimentConfig, deadline):
    buildings, prices = list(scenario.buildings), scenario.prices
    n = len(buildings)
    table = CoalitionValues(buildings, prices, cfg.admm(), deadline)
    agents = list(range(n))
    if scheme == "decentralised" or n == 1:
        coalitions = [(i,) for i in agents]
    elif scheme == "centralised":
        coalitions = [tuple(agents)]
    elif scheme == "optimal":
        coalitions = optimal_partition(agents, cfg.c_max, buildings, prices, cfg.admm(),
                                       cfg.partition_budget, table).coalitions
    else:
        ev = LimitedInfoEvaluator(prices) if scheme == "limited_info" else FullInfoEvaluator()
        coalitions = bottom_up_form(agents, ev, cfg.c_max, buildings, prices,
                                    cfg.admm(), table).coalitions
    evals = [table.get(c) for c in coalitions]
    plans = {i: p for ev in evals for i, p in ev.plans.items()}
    grid = np.array([plans[i].grid_total for i in agents]).T
    return (float(sum(ev.value for ev in evals)), table.admm_iterations,
            [list(c) for c in coalitions], grid)


def run_openloop(config: ExperimentConfig, scenario: Scenario | None = None) -> Report:
    """Full-horizon comparison of every configured scheme."""
    scenario = scenario or config.load()
    names = [b.name or str(i + 1) for i, b in enumerate(scenario.buildings)]
    report = Report(summary={"mode": "openloop", "scenario": scenario.scenario_id,
                             "n_buildings": scenario.n_buildings, "T": scenario.T,
                             "schemes": {}})
    for scheme in config.schemes:
        start = time.perf_counter()
        deadline = time.monotonic() + config.budget_secs
        try:
            cost, iters, coalitions, grid = _openloop_scheme(scheme, scenario, config, deadline)
            status = "ok"
        except BudgetExceeded:
            cost, iters, coalitions, grid, status = None, None, None, None, "timeout"
        runtime = time.perf_counter() - start
        report.rows.append({"scheme": scheme, "status": status, "cost": cost,
                            "iterations": iters, "runtime_s": runtime})
        report.summary["schemes"][scheme] = {"status": status, "cost": cost,
                                             "iterations": iters, "runtime_s": runtime,
                                             "coalitions": coalitions}
        if grid is not None:
            report.trace += _trace_rows(scheme, grid, names)
    return report


def run_mpc(config: ExperimentConfig, scenario: Scenario | None = None) -> Report:
    """Closed-loop comparison; ``baseline_cost`` is the in-run stand-alone sum."""
    scenario = scenario or config.load()
    names = [b.name or str(i + 1) for i, b in enumerate(scenario.buildings)]
    report = Report(summary={"mode": "mpc", "scenario": scenario.scenario_id,
                             "n_buildings": scenario.n_buildings, "T": scenario.T,
                             "t_pred": config.t_pred, "c_max": config.c_max,
                             "schemes": {}})
    for scheme in config.schemes:
        settings = MpcSettings(scheme, config.t_pred, config.c_max, config.admm(),
                               config.exact_first, True, config.partition_budget,
                               time.monotonic() + config.budget_secs)
        try:
            log = mpc_run(scenario, settings)
        except BudgetExceeded:
            runtime = config.budget_secs
            report.rows.append({"scheme": scheme, "status": "timeout", "cost": None,
                                "baseline_cost": None, "iterations": None,
                                "iterations_per_step": None, "dissolutions": None,
                                "runtime_s": runtime})
            report.summary["schemes"][scheme] = {"status": "timeout"}
            continue
        s = log.summary()
        report.rows.append({"scheme": scheme, "status": "ok", "cost": s["total_cost"],
                            "baseline_cost": s["baseline_cost"],
                            "iterations": s["iterations"],
                            "iterations_per_step": s["iterations_per_step"],
                            "dissolutions": s["dissolutions"], "runtime_s": s["runtime_s"]})
        report.summary["schemes"][scheme] = dict(
            s, status="ok", stage_costs=[st.cost for st in log.steps],
            step_iterations=[st.iterations for st in log.steps])
        report.trace += _trace_rows(scheme, log.grid_matrix(), names)
    return report


def run_sweep(config: ExperimentConfig, axis: str | None = None, values=None) -> Report:
    """Repeat :func:`run_mpc` over building counts or coalition-size caps."""
    axis = axis or config.sweep_axis
    values = tuple(values if values is not None else config.sweep_values)
    if axis not in SWEEP_AXES:
        raise InputError(f"sweep axis must be one of {SWEEP_AXES}")
    if not values:
        raise InputError("sweep needs at least one axis value")
    report = Report(summary={"mode": "sweep", "axis": axis, "values": list(values),
                             "runs": []})
    base = config.load() if config.scenario else None
    for v in values:
        if axis == "coalition_size":
            cfg = replace(config, c_max=int(v))
            scenario = base
        else:
            cfg = replace(config, n_buildings=int(v))
            scenario = base.subset(int(v)) if base is not None else None
        sub = run_mpc(cfg, scenario)
        for row in sub.rows:
            report.rows.append({"axis": axis, "value": int(v), **row})
        report.summary["runs"].append({"value": int(v), **sub.summary})
        report.trace += [{"axis": axis, "value": int(v), **r} for r in sub.trace]
    return report


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coalgrid",
                                description="Coalitional energy trading experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("openloop", "mpc", "sweep"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON experiment config")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int)
        s.add_argument("--scheme", help="comma-separated scheme list")
        s.add_argument("--cmax", type=int)
        s.add_argument("--tpred", type=int)
        s.add_argument("--budget-secs", type=float)
        s.add_argument("--scenario", help="scenario directory")
        s.add_argument("--n", type=int, help="buildings in a generated scenario")
        if name == "sweep":
            s.add_argument("--axis", choices=SWEEP_AXES)
            s.add_argument("--values", help="comma-separated axis values")
    g = sub.add_parser("generate")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--T", type=int, default=96)
    g.add_argument("--producers", type=float, default=0.5)
    g.add_argument("--out", required=True)
    v = sub.add_parser("validate")
    v.add_argument("scenario")
    return p


def _config_from(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    over = {}
    for flag, key in (("out", "out"), ("seed", "seed"), ("cmax", "c_max"),
                      ("tpred", "t_pred"), ("budget_secs", "budget_secs"),
                      ("scenario", "scenario"), ("n", "n_buildings")):
        val = getattr(args, flag, None)
        if val is not None:
            over[key] = val
    if args.scheme:
        over["schemes"] = tuple(s.strip() for s in args.scheme.split(",") if s.strip())
    if getattr(args, "axis", None):
        over["sweep_axis"] = args.axis
    if getattr(args, "values", None):
        over["sweep_values"] = tuple(int(x) for x in args.values.split(","))
    return replace(cfg, **over)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "generate":
            sc = generate_scenario(args.seed, args.n, args.T, args.producers)
            print(save_scenario(sc, args.out))
            return 0
        if args.command == "validate":
            sc = load_scenario(args.scenario)
            print(f"ok: {sc.n_buildings} buildings, {sc.T} slots")
            return 0
        cfg = _config_from(args)
        run = {"openloop": run_openloop, "mpc": run_mpc, "sweep": run_sweep}[args.command]
        report = run(cfg)
        report.summary["config"] = asdict(cfg)
        out = report.write(cfg.out)
        for row in report.rows:
            print(", ".join(f"{k}={v}" for k, v in row.items()))
        print(f"wrote {out}")
        return 0
    except (InputError, LoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
