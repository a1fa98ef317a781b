"""Consensus ADMM for the within-coalition problem.

Each agent keeps its demand, generation and battery private and exposes only
its tentative coalition trade ``C_tot``.  The coordinator holds the consensus
targets ``z`` and duals ``lambda`` and runs the updates

    z_i      = C_i - mean_j C_j
    lambda_i = lambda_i + c (C_i - z_i)

Termination uses the max-norm primal residual ``max_{i,t} |C_i(t) - z_i(t)|``
together with the dual residual ``c * max_{i,t} |z_i(t) - z_i^prev(t)|``.  The
primal residual alone measures only ``|mean_j C_j|`` and can vanish on
symmetric instances long before the trades are optimal; set ``dual_tol=None``
to stop on the primal residual only.
After the loop the coalition trades are taken from ``z`` (zero-sum by
construction) and each agent recomputes its grid trades with its controls
held fixed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .model import (Building, DispatchPlan, InputError, PriceSeries, balanced_plan,
                    horizon_cost)
from .solver import SolveSettings, _Kernel

ZERO_SUM_TOL = 1e-9


@dataclass(frozen=True)
class AdmmSettings:
    penalty: float = 0.5
    residual_tol: float = 1e-5
    max_iters: int = 5000
    solve: SolveSettings = field(default_factory=SolveSettings)
    dual_tol: float | None = 3e-4

    def __post_init__(self):
        if not self.penalty > 0:
            raise InputError("penalty must be positive")
        if not self.residual_tol > 0:
            raise InputError("residual_tol must be positive")
        if self.max_iters < 1:
            raise InputError("max_iters must be at least 1")
        if self.dual_tol is not None and not self.dual_tol > 0:
            raise InputError("dual_tol must be positive or None")


@dataclass
class AdmmState:
    """Coordinator-side state; rows are agents, columns are slots."""

    targets: np.ndarray
    duals: np.ndarray
    penalty: float
    iteration: int = 0
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    residual_history: list = field(default_factory=list)

    @classmethod
    def start(cls, n_agents: int, T: int, penalty: float) -> "AdmmState":
        return cls(np.zeros((n_agents, T)), np.zeros((n_agents, T)), penalty)


@dataclass(frozen=True)
class AdmmResult:
    plans: tuple
    cost: float
    iterations: int
    converged: bool
    state: AdmmState


def consensus_update(coal_totals: np.ndarray) -> np.ndarray:
    """Targets ``z_i = C_i - mean(C)``; each column sums to zero."""
    c = np.atleast_2d(np.asarray(coal_totals, dtype=float))
    if c.shape[0] == 0:
        raise InputError("empty coalition")
    z = c - c.mean(axis=0)
    # push the rounding residue onto the last agent so columns sum to 0
    z[-1] = -z[:-1].sum(axis=0)
    return z


def dual_update(duals, penalty: float, coal_totals, targets) -> np.ndarray:
    duals = np.asarray(duals, dtype=float)
    coal_totals = np.asarray(coal_totals, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if not (duals.shape == coal_totals.shape == targets.shape):
        raise InputError("dual_update needs equal shapes")
    return duals + penalty * (coal_totals - targets)


def restore_feasibility(plans: Sequence[DispatchPlan], targets,
                        buildings: Sequence[Building]) -> list[DispatchPlan]:
    """Adopt the zero-sum targets as coalition trades and rebalance the grid."""
    z = np.atleast_2d(np.asarray(targets, dtype=float))
    if z.shape[0] != len(plans) or len(plans) != len(buildings):
        raise InputError("need one target row and one building per plan")
    if np.max(np.abs(z.sum(axis=0)), initial=0.0) > ZERO_SUM_TOL:
        raise InputError("targets are not zero-sum per slot")
    return [balanced_plan(b.params, b.series, p.charge, p.discharge, zi)
            for p, zi, b in zip(plans, z, buildings)]


def _grid_cost(g_tot: np.ndarray, prices: PriceSeries) -> float:
    return float(prices.buy @ np.maximum(g_tot, 0.0) - prices.sell @ np.maximum(-g_tot, 0.0))


class _Agent:
    """Holds one building's private data; answers with coalition trades only."""

    def __init__(self, building: Building, prices: PriceSeries, penalty: float,
                 settings: SolveSettings):
        self._building = building
        self._prices = prices
        self._penalty = penalty
        self._kernel = _Kernel(building.params, building.series, prices, settings)
        self._net = building.series.demand - building.series.generation
        self.charge = self.discharge = self.coal = None

    def local_step(self, dual: np.ndarray, target: np.ndarray) -> np.ndarray:
        self.charge, self.discharge, self.coal = self._kernel.controls(
            dual - self._penalty * target, self._penalty)
        return self.coal

    def grid_cost(self) -> float:
        return _grid_cost(self._net + self.charge - self.discharge - self.coal, self._prices)

    def repaired_cost(self, target: np.ndarray) -> float:
        return _grid_cost(self._net + self.charge - self.discharge - target, self._prices)

    def repaired(self, target: np.ndarray, charge=None, discharge=None) -> DispatchPlan:
        b = self._building
        charge = self.charge if charge is None else charge
        discharge = self.discharge if discharge is None else discharge
        return balanced_plan(b.params, b.series, charge, discharge, target)


def admm_solve(buildings: Sequence[Building], prices: PriceSeries,
               settings: AdmmSettings | None = None,
               trace: TextIO | None = None) -> AdmmResult:
    """Solve one coalition's joint dispatch by consensus ADMM.

    Returns the cheapest repaired (hence feasible) iterate, its cost and the
    number of iterations run.  ``converged`` is False when ``max_iters`` was
    hit before the residual dropped below ``residual_tol``.  If ``trace`` is
    given, one CSV row per iteration is written to it.
    """
    settings = settings or AdmmSettings()
    if len(buildings) < 2:
        raise InputError("admm_solve needs at least two agents")
    T = len(prices)
    agents = [_Agent(b, prices, settings.penalty, settings.solve) for b in buildings]
    state = AdmmState.start(len(agents), T, settings.penalty)
    writer = None
    if trace is not None:
        writer = csv.writer(trace)
        writer.writerow(["iteration", "residual", "dual_residual", "objective",
                         "repaired_cost"])

    best_cost, best = np.inf, None
    converged = False
    for k in range(1, settings.max_iters + 1):
        coal = np.array([a.local_step(state.duals[i], state.targets[i])
                         for i, a in enumerate(agents)])
        previous = state.targets
        state.targets = consensus_update(coal)
        state.duals = dual_update(state.duals, state.penalty, coal, state.targets)
        state.iteration = k
        state.primal_residual = float(np.max(np.abs(coal - state.targets)))
        state.dual_residual = state.penalty * float(np.max(np.abs(state.targets - previous)))
        state.residual_history.append(state.primal_residual)

        cost = sum(a.repaired_cost(state.targets[i]) for i, a in enumerate(agents))
        if writer is not None:
            writer.writerow([k, state.primal_residual, state.dual_residual,
                             sum(a.grid_cost() for a in agents), cost])
        if cost < best_cost:
            best_cost = cost
            best = [(a.charge, a.discharge, state.targets[i]) for i, a in enumerate(agents)]
        if state.primal_residual < settings.residual_tol and (
                settings.dual_tol is None or state.dual_residual < settings.dual_tol):
            converged = True
            break
    plans = tuple(a.repaired(z, uc, ud) for a, (uc, ud, z) in zip(agents, best))
    cost = sum(horizon_cost(p, prices) for p in plans)
    return AdmmResult(plans, float(cost), state.iteration, converged, state)
