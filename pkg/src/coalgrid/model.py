"""Building, price and dispatch types plus the battery/power-balance algebra.

Units: energy in kWh per slot, prices in currency per kWh.  Every type is an
immutable value; arrays are copied and flagged read-only on construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_TOLERANCE = 1e-6


class InputError(ValueError):
    """Raised when inputs violate a documented precondition."""


class SolverError(RuntimeError):
    """Raised when a numerical solve fails to converge."""


class BudgetExceeded(RuntimeError):
    """Raised when an enumeration or wall-clock budget is exhausted."""


def _frozen(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BuildingParams:
    charge_efficiency: float
    discharge_efficiency: float
    max_charge_rate: float
    soc_max: float
    soc_init: float

    def __post_init__(self):
        for name in ("charge_efficiency", "discharge_efficiency"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InputError(f"{name} must lie in (0, 1), got {v}")
        if self.max_charge_rate < 0:
            raise InputError("max_charge_rate must be non-negative")
        if not 0.0 <= self.soc_init <= self.soc_max:
            raise InputError(
                f"soc_init={self.soc_init} outside [0, soc_max={self.soc_max}]")

    def with_soc(self, soc: float) -> "BuildingParams":
        """Same battery, different initial state of charge."""
        soc = min(max(float(soc), 0.0), self.soc_max)
        return BuildingParams(self.charge_efficiency, self.discharge_efficiency,
                              self.max_charge_rate, self.soc_max, soc)


@dataclass(frozen=True)
class BuildingSeries:
    demand: np.ndarray
    generation: np.ndarray

    def __post_init__(self):
        d = _frozen(self.demand, "demand")
        g = _frozen(self.generation, "generation")
        if d.shape != g.shape:
            raise InputError("demand and generation lengths differ")
        if np.any(d < 0) or np.any(g < 0):
            raise InputError("demand and generation must be non-negative")
        object.__setattr__(self, "demand", d)
        object.__setattr__(self, "generation", g)

    def __len__(self):
        return self.demand.shape[0]

    @property
    def net(self) -> np.ndarray:
        """Demand minus generation per slot."""
        return self.demand - self.generation

    def window(self, start: int, stop: int) -> "BuildingSeries":
        return BuildingSeries(self.demand[start:stop], self.generation[start:stop])


@dataclass(frozen=True)
class PriceSeries:
    buy: np.ndarray
    sell: np.ndarray

    def __post_init__(self):
        b = _frozen(self.buy, "buy")
        s = _frozen(self.sell, "sell")
        if b.shape != s.shape:
            raise InputError("buy and sell price lengths differ")
        bad = np.flatnonzero(~((b > s) & (s > 0)))
        if bad.size:
            t = int(bad[0])
            raise InputError(
                f"slot {t + 1}: need buy > sell > 0, got buy={b[t]}, sell={s[t]}")
        object.__setattr__(self, "buy", b)
        object.__setattr__(self, "sell", s)

    def __len__(self):
        return self.buy.shape[0]

    @property
    def spread(self) -> np.ndarray:
        return self.buy - self.sell

    def window(self, start: int, stop: int) -> "PriceSeries":
        return PriceSeries(self.buy[start:stop], self.sell[start:stop])


@dataclass(frozen=True)
class Horizon:
    num_slots: int
    slot_duration: float = 15.0  # minutes, metadata only

    def __post_init__(self):
        if int(self.num_slots) < 1:
            raise InputError("horizon needs at least one slot")


@dataclass(frozen=True)
class Building:
    """One agent: battery parameters and its demand/generation profile."""

    params: BuildingParams
    series: BuildingSeries
    name: str = ""


@dataclass(frozen=True)
class DispatchPlan:
    grid_buy: np.ndarray
    grid_sell: np.ndarray
    coal_buy: np.ndarray
    coal_sell: np.ndarray
    charge: np.ndarray
    discharge: np.ndarray
    soc: np.ndarray

    def __post_init__(self):
        T = None
        for name in ("grid_buy", "grid_sell", "coal_buy", "coal_sell",
                     "charge", "discharge"):
            arr = _frozen(getattr(self, name), name)
            if T is None:
                T = arr.shape[0]
            elif arr.shape[0] != T:
                raise InputError(f"{name} has length {arr.shape[0]}, expected {T}")
            object.__setattr__(self, name, arr)
        soc = _frozen(self.soc, "soc")
        if soc.shape[0] != T + 1:
            raise InputError("soc must have length T + 1")
        object.__setattr__(self, "soc", soc)

    def __len__(self):
        return self.grid_buy.shape[0]

    @property
    def grid_total(self) -> np.ndarray:
        return self.grid_buy - self.grid_sell

    @property
    def coal_total(self) -> np.ndarray:
        return self.coal_buy - self.coal_sell

    @classmethod
    def zeros(cls, T: int, soc_init: float = 0.0) -> "DispatchPlan":
        z = np.zeros(T)
        return cls(z, z, z, z, z, z, np.full(T + 1, soc_init))


ROUNDOFF = 1e-12


def split_signed(total: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a signed trade into non-negative (buy, sell) parts."""
    total = np.asarray(total, dtype=float)
    return np.maximum(total, 0.0), np.maximum(-total, 0.0)


def soc_trajectory(params: BuildingParams, charge, discharge) -> np.ndarray:
    """Fold the battery recursion from ``soc_init``; length T + 1."""
    delta = (params.charge_efficiency * np.asarray(charge, dtype=float)
             - np.asarray(discharge, dtype=float) / params.discharge_efficiency)
    return params.soc_init + np.concatenate(([0.0], np.cumsum(delta)))


def balanced_plan(params: BuildingParams, series: BuildingSeries, charge,
                  discharge, coal_total=None) -> DispatchPlan:
    """Build the plan whose grid trades close the power balance exactly.

    Controls and coalition trades are taken as given; the grid covers the
    remainder, buying or selling but never both in one slot.
    """
    charge = np.asarray(charge, dtype=float)
    discharge = np.asarray(discharge, dtype=float)
    T = len(series)
    if coal_total is None:
        coal_total = np.zeros(T)
    coal_total = np.asarray(coal_total, dtype=float)
    g_tot = series.demand + charge - series.generation - discharge - coal_total
    g_tot[np.abs(g_tot) < ROUNDOFF] = 0.0  # cancellation noise, not a trade
    g_buy, g_sell = split_signed(g_tot)
    c_buy, c_sell = split_signed(coal_total)
    return DispatchPlan(g_buy, g_sell, c_buy, c_sell, charge, discharge,
                        soc_trajectory(params, charge, discharge))


def soc_step(soc: float, params: BuildingParams, uc: float, ud: float) -> float:
    """One step of the battery recursion; no bound checks."""
    return soc + params.charge_efficiency * uc - ud / params.discharge_efficiency


def horizon_cost(plan: DispatchPlan, prices: PriceSeries) -> float:
    """Grid cost of a plan over its horizon; coalition trades are free."""
    if len(plan) != len(prices):
        raise InputError(f"plan has {len(plan)} slots, prices have {len(prices)}")
    return float(np.dot(prices.buy, plan.grid_buy) - np.dot(prices.sell, plan.grid_sell))


def realized_stage_cost(plans: Iterable[DispatchPlan], prices: PriceSeries, t: int) -> float:
    """Sum of slot-``t`` grid costs over ``plans`` (``t`` is 0-based)."""
    if not 0 <= t < len(prices):
        raise InputError(f"slot {t} outside horizon of {len(prices)}")
    total = 0.0
    for plan in plans:
        total += prices.buy[t] * plan.grid_buy[t] - prices.sell[t] * plan.grid_sell[t]
    return float(total)


@dataclass(frozen=True)
class FeasibilityReport:
    ok: bool
    constraint: str = ""
    slot: int | None = None
    violation: float = 0.0
    messages: tuple[str, ...] = field(default=())

    def __bool__(self):
        return self.ok


def check_feasible(plan: DispatchPlan, params: BuildingParams, series: BuildingSeries,
                   tolerance: float = DEFAULT_TOLERANCE) -> FeasibilityReport:
    """Check a plan against the building's constraint set.

    Slots in the report are 1-based.  Returns on the first violation found,
    scanning slot by slot.
    """
    T = len(series)
    if len(plan) != T:
        return FeasibilityReport(False, "horizon length", None, float(abs(len(plan) - T)))
    tol = float(tolerance)
    soc = plan.soc
    if abs(soc[0] - params.soc_init) > tol:
        return FeasibilityReport(False, "initial soc", 1, abs(soc[0] - params.soc_init))
    rho_c, rho_d = params.charge_efficiency, params.discharge_efficiency
    u_max = params.max_charge_rate
    for t in range(T):
        checks = (
            ("grid_buy >= 0", -plan.grid_buy[t]),
            ("grid_sell >= 0", -plan.grid_sell[t]),
            ("coal_buy >= 0", -plan.coal_buy[t]),
            ("coal_sell >= 0", -plan.coal_sell[t]),
            ("charge >= 0", -plan.charge[t]),
            ("discharge >= 0", -plan.discharge[t]),
            ("charge <= u_max", plan.charge[t] - u_max),
            ("discharge <= u_max", plan.discharge[t] - u_max),
        )
        for name, excess in checks:
            if excess > tol:
                return FeasibilityReport(False, name, t + 1, float(excess))
        lhs = series.demand[t] + plan.charge[t]
        rhs = (series.generation[t] + plan.discharge[t] + plan.grid_total[t]
               + plan.coal_total[t])
        if abs(lhs - rhs) > tol:
            return FeasibilityReport(False, "power balance", t + 1, float(abs(lhs - rhs)))
        nxt = soc[t] + rho_c * plan.charge[t] - plan.discharge[t] / rho_d
        if abs(nxt - soc[t + 1]) > tol:
            return FeasibilityReport(False, "soc dynamics", t + 1, float(abs(nxt - soc[t + 1])))
    for t in range(T + 1):
        if soc[t] < -tol:
            return FeasibilityReport(False, "soc >= 0", t + 1, float(-soc[t]))
        if soc[t] > params.soc_max + tol:
            return FeasibilityReport(False, "soc <= soc_max", t + 1,
                                     float(soc[t] - params.soc_max))
    return FeasibilityReport(True)


def total_cost(plans: Sequence[DispatchPlan], prices: PriceSeries) -> float:
    return float(sum(horizon_cost(p, prices) for p in plans))
