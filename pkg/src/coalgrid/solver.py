"""Per-building convex solves.

Both the dispatch LP and the ADMM local QP go through one interior-point
kernel (``_ipm.solve_kernel``).  Its raw iterate is polished into an exactly
balanced :class:`DispatchPlan`: controls are clipped to their box, residual
grid trades below ``SNAP`` are folded back into the battery, and the grid
trades are recomputed from the power balance.

``brute_force_plan`` is an independent grid-search oracle used by the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _ipm
from .model import (BuildingParams, BuildingSeries, DispatchPlan, InputError,
                    PriceSeries, SolverError, balanced_plan, horizon_cost)

SNAP = 1e-8


@dataclass(frozen=True)
class SolveSettings:
    optimality_tolerance: float = 1e-10
    max_iterations: int = 200
    feasibility_tolerance: float = 1e-6

    def __post_init__(self):
        if not (self.optimality_tolerance > 0 and self.max_iterations > 0
                and self.feasibility_tolerance > 0):
            raise InputError("solve settings must be positive")


@dataclass(frozen=True)
class LocalQpSpec:
    """One agent's ADMM subproblem: cost + dual'C + penalty/2 ||C - target||^2."""

    params: BuildingParams
    series: BuildingSeries
    prices: PriceSeries
    dual: np.ndarray
    target: np.ndarray
    penalty: float

    def __post_init__(self):
        T = len(self.series)
        dual = np.asarray(self.dual, dtype=float)
        target = np.asarray(self.target, dtype=float)
        if dual.shape != (T,) or target.shape != (T,):
            raise InputError("dual and target must have one entry per slot")
        if not self.penalty > 0:
            raise InputError("penalty must be positive")
        object.__setattr__(self, "dual", dual)
        object.__setattr__(self, "target", target)


def _check_lengths(series: BuildingSeries, prices: PriceSeries):
    if len(series) != len(prices):
        raise InputError(f"series has {len(series)} slots, prices have {len(prices)}")


class _Kernel:
    """Kernel inputs packed once for repeated solves on one building."""

    def __init__(self, params: BuildingParams, series: BuildingSeries,
                 prices: PriceSeries, settings: SolveSettings):
        _check_lengths(series, prices)
        self.params = params
        self.series = series
        self._arrays = (np.ascontiguousarray(series.net, dtype=float),
                        np.ascontiguousarray(prices.buy), np.ascontiguousarray(prices.sell))
        self._scalars = (float(params.charge_efficiency), float(params.discharge_efficiency),
                         float(params.max_charge_rate), float(params.soc_max),
                         float(params.soc_init), float(settings.optimality_tolerance),
                         int(settings.max_iterations))

    def controls(self, lin_c, quad_c: float):
        """Polished ``(charge, discharge, coal_total)`` of one solve."""
        net, buy, sell = self._arrays
        rho_c, rho_d, u_max, soc_max, soc0, tol, max_it = self._scalars
        x, status, iters = _ipm.solve_kernel(
            net, buy, sell, np.ascontiguousarray(lin_c, dtype=float), float(quad_c),
            rho_c, rho_d, u_max, soc_max, soc0, tol, max_it)
        if status == _ipm.NUMERICAL:
            raise SolverError("interior-point factorisation broke down")
        if status != _ipm.OK:
            raise SolverError(f"interior point did not converge in {iters} iterations")
        return _ipm.polish(x, net, float(quad_c), u_max, SNAP)


def _run_kernel(params, series, prices, lin_c, quad_c, settings):
    uc, ud, ctot = _Kernel(params, series, prices, settings).controls(lin_c, quad_c)
    return balanced_plan(params, series, uc, ud, ctot)


def solve_decentralised(params: BuildingParams, series: BuildingSeries,
                        prices: PriceSeries,
                        settings: SolveSettings | None = None) -> tuple[DispatchPlan, float]:
    """Optimal stand-alone dispatch of one building and its cost V({i})."""
    settings = settings or SolveSettings()
    plan = _run_kernel(params, series, prices, np.zeros(len(series)), 0.0, settings)
    return plan, horizon_cost(plan, prices)


def solve_local_qp(spec: LocalQpSpec, settings: SolveSettings | None = None) -> DispatchPlan:
    """Minimise grid cost + dual'C_tot + penalty/2 ||C_tot - target||^2."""
    settings = settings or SolveSettings()
    lin_c = spec.dual - spec.penalty * spec.target
    return _run_kernel(spec.params, spec.series, spec.prices, lin_c, spec.penalty, settings)


def local_objective(plan: DispatchPlan, spec: LocalQpSpec) -> float:
    c = plan.coal_total
    return (horizon_cost(plan, spec.prices) + float(spec.dual @ c)
            + 0.5 * spec.penalty * float(np.sum((c - spec.target) ** 2)))


def _action_grid(lo, hi, step, u_max, centre):
    vals = np.append(np.arange(lo, hi + 0.5 * step, step), centre)
    vals = vals[(vals >= -u_max - 1e-12) & (vals <= u_max + 1e-12)]
    extra = [v for v in (-u_max, u_max, 0.0) if lo - 1e-12 <= v <= hi + 1e-12]
    return np.unique(np.clip(np.concatenate([vals, extra]), -u_max, u_max))


def _best_on_grid(params, series, prices, grids):
    combos = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, len(grids))
    uc = np.maximum(combos, 0.0)
    ud = np.maximum(-combos, 0.0)
    soc = params.soc_init + np.cumsum(
        params.charge_efficiency * uc - ud / params.discharge_efficiency, axis=1)
    ok = np.all((soc >= -1e-12) & (soc <= params.soc_max + 1e-12), axis=1)
    g_tot = series.demand + uc - series.generation - ud
    cost = (np.maximum(g_tot, 0) @ prices.buy - np.maximum(-g_tot, 0) @ prices.sell)
    cost = np.where(ok, cost, np.inf)
    k = int(np.argmin(cost))
    return combos[k], float(cost[k])


def brute_force_plan(params: BuildingParams, series: BuildingSeries, prices: PriceSeries,
                     control_grid_step: float,
                     max_combinations: int = 2_000_000) -> tuple[DispatchPlan, float]:
    """Grid search over net battery actions; test oracle for T <= 4.

    Each slot's action ``a`` charges ``max(a, 0)`` and discharges
    ``max(-a, 0)``; grid trades follow from the power balance.  When the full
    grid at ``control_grid_step`` exceeds ``max_combinations`` the search starts
    coarser and zooms in around the incumbent until it reaches that step.
    """
    _check_lengths(series, prices)
    T = len(series)
    if T > 4:
        raise InputError("brute force is limited to T <= 4")
    if control_grid_step <= 0:
        raise InputError("control_grid_step must be positive")
    u_max = params.max_charge_rate
    if u_max == 0 or params.soc_max == 0:
        plan = balanced_plan(params, series, np.zeros(T), np.zeros(T))
        return plan, horizon_cost(plan, prices)

    per_slot = max(3, int(max_combinations ** (1.0 / T)))
    centre = np.zeros(T)
    half = u_max
    step = max(control_grid_step, 2 * half / (per_slot - 1))
    while True:
        grids = [_action_grid(max(-u_max, c - half), min(u_max, c + half), step, u_max, c)
                 for c in centre]
        centre, cost = _best_on_grid(params, series, prices, grids)
        if not np.isfinite(cost):
            raise SolverError("no feasible grid point")
        if step <= control_grid_step:
            break
        half = 2 * step
        step = max(control_grid_step, 2 * half / (per_slot - 1))
    plan = balanced_plan(params, series, np.maximum(centre, 0), np.maximum(-centre, 0))
    return plan, horizon_cost(plan, prices)
