"""Receding-horizon control with per-step coalition formation.

At every slot ``t`` each scheme plans over the forecast window, applies only
the first-slot battery controls and coalition trades, and lets the grid absorb
whatever the true demand and generation require.  Coalition schemes also
compute every agent's stand-alone plan on the same window; a coalition whose
realised stage cost exceeds the sum of its members' stand-alone realised costs
is dissolved for that step and its members act on their stand-alone plans.

Summing the per-step check gives ``J_coal <= J_dec`` where ``J_dec`` is the
in-run counterfactual ``sum_t sum_i R({i})(t)``.  That sum is logged as
``baseline_cost`` next to the realised total.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .admm import AdmmSettings
from .coalition import (CoalitionValues, FullInfoEvaluator, LimitedInfoEvaluator,
                        bottom_up_form, optimal_partition)
from .data import PredictionSet, Scenario
from .model import Building, DispatchPlan, InputError, PriceSeries, soc_step

SCHEMES = ("decentralised", "limited_info", "bottom_up", "centralised", "optimal")


@dataclass(frozen=True)
class MpcSettings:
    scheme: str = "limited_info"
    t_pred: int = 8
    c_max: int = 6
    admm: AdmmSettings = field(default_factory=AdmmSettings)
    exact_first: bool = True
    dissolve: bool = True
    partition_budget: int = 5000
    deadline: float | None = None  # time.monotonic() value

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InputError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.t_pred < 0:
            raise InputError("t_pred must be non-negative")
        if self.c_max < 1:
            raise InputError("c_max must be at least 1")


@dataclass(frozen=True)
class StepRecord:
    t: int
    formed: tuple  # coalitions proposed by the scheme
    coalitions: tuple  # coalitions after dissolution
    coalition_costs: tuple  # realised R(C_j)(t), aligned with ``coalitions``
    singleton_costs: np.ndarray  # realised R({i})(t) per agent
    dissolved: tuple
    iterations: int
    charge: np.ndarray
    discharge: np.ndarray
    coal_total: np.ndarray
    grid_total: np.ndarray

    @property
    def cost(self) -> float:
        return float(sum(self.coalition_costs))

    @property
    def baseline(self) -> float:
        return float(np.sum(self.singleton_costs))


@dataclass
class MpcLog:
    scheme: str
    n_agents: int
    steps: list = field(default_factory=list)
    soc: list = field(default_factory=list)  # one array per slot boundary
    runtime: float = 0.0

    @property
    def total_cost(self) -> float:
        return float(sum(s.cost for s in self.steps))

    @property
    def baseline_cost(self) -> float:
        return float(sum(s.baseline for s in self.steps))

    @property
    def iterations(self) -> int:
        return int(sum(s.iterations for s in self.steps))

    @property
    def dissolutions(self) -> int:
        return int(sum(len(s.dissolved) for s in self.steps))

    def soc_matrix(self) -> np.ndarray:
        """SoC at each slot boundary, shape (T + 1, N)."""
        return np.array(self.soc)

    def grid_matrix(self) -> np.ndarray:
        return np.array([s.grid_total for s in self.steps])

    def summary(self) -> dict:
        n = max(len(self.steps), 1)
        return {"scheme": self.scheme, "total_cost": self.total_cost,
                "baseline_cost": self.baseline_cost, "iterations": self.iterations,
                "iterations_per_step": self.iterations / n,
                "dissolutions": self.dissolutions, "steps": len(self.steps),
                "runtime_s": self.runtime}

    def write_csv(self, path) -> None:
        """One row per step per coalition (1-based slots and members)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "coalition", "members", "stage_cost",
                        "singleton_cost_sum", "dissolved", "iterations"])
            for s in self.steps:
                for j, (c, cost) in enumerate(zip(s.coalitions, s.coalition_costs)):
                    base = float(sum(s.singleton_costs[i] for i in c))
                    gone = any(set(c) <= set(d) for d in s.dissolved)
                    w.writerow([s.t + 1, j + 1, " ".join(str(i + 1) for i in c),
                                repr(cost), repr(base), int(gone), s.iterations])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def dissolution_check(coalition_cost: float, singleton_costs: Sequence[float]) -> str:
    """``"keep"`` unless the coalition did strictly worse than its members alone."""
    return "dissolve" if coalition_cost > float(np.sum(singleton_costs)) else "keep"


def _stage_costs(prices: PriceSeries, t: int, g_tot: np.ndarray) -> np.ndarray:
    return np.where(g_tot > 0, prices.buy[t] * g_tot, prices.sell[t] * g_tot)


def _form(scheme: str, table: CoalitionValues, n: int, settings: MpcSettings) -> list[tuple]:
    agents = list(range(n))
    if scheme == "decentralised" or n == 1:
        return [(i,) for i in agents]
    if scheme == "centralised":
        return [tuple(agents)]
    if scheme == "limited_info":
        ev = LimitedInfoEvaluator(table.prices)
    elif scheme == "bottom_up":
        ev = FullInfoEvaluator()
    else:
        st = optimal_partition(agents, settings.c_max, table.buildings, table.prices,
                               settings.admm, settings.partition_budget, table)
        return list(st.coalitions)
    st = bottom_up_form(agents, ev, settings.c_max, table.buildings, table.prices,
                        settings.admm, table)
    return list(st.coalitions)


def mpc_step(t: int, socs: Sequence[float], scenario: Scenario, predictions: PredictionSet,
             settings: MpcSettings) -> tuple[StepRecord, np.ndarray]:
    """Plan on ``predictions``, apply the first slot, return the record and new SoCs.

    ``t`` is 0-based.  Grid trades use the true demand and generation at
    ``t``; controls and coalition trades are the planned first-slot values.
    """
    n = scenario.n_buildings
    if not 0 <= t < scenario.T:
        raise InputError(f"slot {t} outside horizon")
    if len(socs) != n or predictions.demand.shape[0] != n:
        raise InputError("need one SoC and one forecast row per building")
    stop = t + predictions.length
    prices = scenario.prices.window(t, stop)
    window = [Building(b.params.with_soc(s), predictions.series(i), b.name)
              for i, (b, s) in enumerate(zip(scenario.buildings, socs))]
    table = CoalitionValues(window, prices, settings.admm, settings.deadline)
    formed = _form(settings.scheme, table, n, settings)
    singles = [table.get((i,)).plans[i] for i in range(n)]

    d = np.array([b.series.demand[t] for b in scenario.buildings])
    g = np.array([b.series.generation[t] for b in scenario.buildings])

    def applied(plans_by_agent: dict[int, DispatchPlan]):
        uc = np.array([plans_by_agent[i].charge[0] for i in range(n)])
        ud = np.array([plans_by_agent[i].discharge[0] for i in range(n)])
        ct = np.array([plans_by_agent[i].coal_total[0] for i in range(n)])
        return uc, ud, ct

    single_plans = dict(enumerate(singles))
    uc_s, ud_s, ct_s = applied(single_plans)
    g_single = d + uc_s - g - ud_s - ct_s
    r_single = _stage_costs(scenario.prices, t, g_single)

    chosen = dict(single_plans)
    for c in formed:
        if len(c) > 1:
            chosen.update(table.get(c).plans)
    uc, ud, ct = applied(chosen)
    g_tot = d + uc - g - ud - ct
    r = _stage_costs(scenario.prices, t, g_tot)

    coalitions, costs, dissolved = [], [], []
    for c in formed:
        idx = list(c)
        cost = float(np.sum(r[idx]))
        if len(c) > 1 and settings.dissolve and \
                dissolution_check(cost, r_single[idx]) == "dissolve":
            dissolved.append(c)
            for i in c:
                uc[i], ud[i], ct[i] = uc_s[i], ud_s[i], ct_s[i]
                g_tot[i], r[i] = g_single[i], r_single[i]
                coalitions.append((i,))
                costs.append(float(r_single[i]))
        else:
            coalitions.append(tuple(c))
            costs.append(cost)

    new_soc = np.array([
        min(max(soc_step(s, b.params, uc[i], ud[i]), 0.0), b.params.soc_max)
        for i, (b, s) in enumerate(zip(scenario.buildings, socs))])
    rec = StepRecord(t, tuple(tuple(c) for c in formed), tuple(coalitions), tuple(costs),
                     r_single, tuple(dissolved), table.admm_iterations,
                     uc, ud, ct, g_tot)
    return rec, new_soc


def mpc_run(scenario: Scenario, settings: MpcSettings | None = None,
            scheme: str | None = None, t_pred: int | None = None) -> MpcLog:
    """Closed-loop run over the whole horizon."""
    settings = settings or MpcSettings()
    if scheme is not None or t_pred is not None:
        settings = MpcSettings(scheme or settings.scheme,
                               settings.t_pred if t_pred is None else t_pred,
                               settings.c_max, settings.admm, settings.exact_first,
                               settings.dissolve, settings.partition_budget,
                               settings.deadline)
    start = time.perf_counter()
    socs = np.array([b.params.soc_init for b in scenario.buildings])
    log = MpcLog(settings.scheme, scenario.n_buildings, soc=[socs.copy()])
    for t in range(scenario.T):
        pred = scenario.forecast(t, settings.t_pred, settings.exact_first)
        rec, socs = mpc_step(t, socs, scenario, pred, settings)
        log.steps.append(rec)
        log.soc.append(socs.copy())
    log.runtime = time.perf_counter() - start
    return log
