"""Scenario files and the seeded synthetic generator.

Directory layout read by :func:`load_scenario`::

    prices.csv        slot,buy_price,sell_price
    buildings.json    {"<id>": {"rho_c", "rho_d", "u_max", "soc_max",
                                "soc_init", "series_file"}, ...}
    <series_file>     slot,demand_kwh,generation_kwh[,pred_demand_kwh,pred_generation_kwh]

Slots are numbered from 1.  Prediction columns hold one-step-ahead forecasts;
longer forecast windows are synthesised (see :meth:`Scenario.forecast`).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (Building, BuildingParams, BuildingSeries, Horizon, InputError,
                    PriceSeries)

SLOTS_PER_DAY = 96
PRICE_HEADER = ["slot", "buy_price", "sell_price"]
SERIES_HEADER = ["slot", "demand_kwh", "generation_kwh"]
PRED_HEADER = ["pred_demand_kwh", "pred_generation_kwh"]


class LoadError(InputError):
    """A scenario file is missing, malformed or violates a model invariant."""


@dataclass(frozen=True)
class PredictionSet:
    """Forecast window made at slot ``start`` (0-based); rows are buildings."""

    start: int
    demand: np.ndarray
    generation: np.ndarray

    def __post_init__(self):
        if self.demand.shape != self.generation.shape:
            raise InputError("forecast shapes differ")
        if np.any(self.demand < 0) or np.any(self.generation < 0):
            raise InputError("forecasts must be non-negative")

    @property
    def length(self) -> int:
        return self.demand.shape[1]

    def series(self, i: int) -> BuildingSeries:
        return BuildingSeries(self.demand[i], self.generation[i])


@dataclass(frozen=True)
class Scenario:
    horizon: Horizon
    prices: PriceSeries
    buildings: tuple
    scenario_id: str = "scenario"
    seed: int | None = None
    noise_sigma: float = 0.0
    pred_demand: np.ndarray | None = field(default=None, repr=False)
    pred_generation: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "buildings", tuple(self.buildings))
        if not self.buildings:
            raise InputError("scenario has no buildings")
        T = self.horizon.num_slots
        if len(self.prices) != T:
            raise InputError("price series does not match the horizon")
        for b in self.buildings:
            if len(b.series) != T:
                raise InputError(f"building {b.name!r} series does not match the horizon")
        if (self.pred_demand is None) != (self.pred_generation is None):
            raise InputError("give both prediction arrays or neither")
        if self.pred_demand is not None:
            shape = (len(self.buildings), T)
            if self.pred_demand.shape != shape or self.pred_generation.shape != shape:
                raise InputError("prediction arrays must be (buildings, slots)")
        if self.noise_sigma < 0:
            raise InputError("noise_sigma must be non-negative")

    @property
    def n_buildings(self) -> int:
        return len(self.buildings)

    @property
    def T(self) -> int:
        return self.horizon.num_slots

    def subset(self, n: int) -> "Scenario":
        """The first ``n`` buildings of this scenario."""
        pd = None if self.pred_demand is None else self.pred_demand[:n]
        pg = None if self.pred_generation is None else self.pred_generation[:n]
        return Scenario(self.horizon, self.prices, self.buildings[:n],
                        f"{self.scenario_id}-n{n}", self.seed, self.noise_sigma, pd, pg)

    def forecast(self, t: int, t_pred: int, exact_first: bool = True) -> PredictionSet:
        """Forecast for slots ``t .. t + min(t_pred, T-1-t)`` made at slot ``t``.

        Loaded one-step-ahead columns are used where present.  Otherwise the
        true profile is perturbed by multiplicative noise ``1 + eps``,
        ``eps ~ U[-sigma, sigma]``, drawn from a generator keyed on
        ``(seed, building, t)`` so that forecasts are reproducible.
        """
        T = self.T
        if not 0 <= t < T:
            raise InputError(f"slot {t} outside horizon")
        stop = min(t + t_pred, T - 1) + 1
        d = np.array([b.series.demand[t:stop] for b in self.buildings])
        g = np.array([b.series.generation[t:stop] for b in self.buildings])
        if self.pred_demand is not None:
            d = self.pred_demand[:, t:stop].copy()
            g = self.pred_generation[:, t:stop].copy()
        elif self.noise_sigma > 0:
            seed = 0 if self.seed is None else int(self.seed)
            for i in range(len(self.buildings)):
                rng = np.random.default_rng([seed, i, t])
                eps = rng.uniform(-self.noise_sigma, self.noise_sigma, size=(2, stop - t))
                d[i] *= 1 + eps[0]
                g[i] *= 1 + eps[1]
        if exact_first:
            d[:, 0] = [b.series.demand[t] for b in self.buildings]
            g[:, 0] = [b.series.generation[t] for b in self.buildings]
        return PredictionSet(t, d, g)


def _day_hours(T: int, slot_minutes: float) -> np.ndarray:
    return (np.arange(T) * slot_minutes / 60.0) % 24.0


def _bump(h, centre, width):
    return np.exp(-0.5 * ((h - centre) / width) ** 2)


def generate_scenario(seed: int, N: int, T: int = SLOTS_PER_DAY, producers: float = 0.5,
                      noise_sigma: float = 0.1, slot_minutes: float = 15.0) -> Scenario:
    """Seeded synthetic day of ``N`` prosumer buildings over ``T`` slots.

    ``producers`` is the fraction of buildings with rooftop generation large
    enough to export around midday; the rest generate at most half their
    demand in every slot and so buy from the grid throughout.  Prices follow
    a time-of-use buy tariff with every sell price below every buy price
    (so storing energy for resale never pays).
    """
    if N < 1 or T < 1:
        raise InputError("need N >= 1 and T >= 1")
    if not 0.0 <= producers <= 1.0:
        raise InputError("producers must be a fraction in [0, 1]")
    rng = np.random.default_rng(seed)
    hours = _day_hours(T, slot_minutes)
    slot_scale = slot_minutes / 15.0

    buy = (0.16 + 0.10 * _bump(hours, 19.0, 1.5) + 0.05 * _bump(hours, 8.0, 1.2)
           + rng.uniform(0.0, 0.02, T))
    sell = 0.05 + rng.uniform(0.0, 0.03, T)
    prices = PriceSeries(buy, sell)

    n_prod = int(round(producers * N))
    solar_shape = np.clip(np.sin(np.pi * (hours - 6.0) / 14.0), 0.0, None)
    buildings = []
    for i in range(N):
        base = rng.uniform(0.10, 0.30)
        demand = (base + rng.uniform(0.2, 0.5) * _bump(hours, 7.5, 1.0)
                  + rng.uniform(0.3, 0.8) * _bump(hours, 19.0, 1.5))
        demand = demand * (1 + rng.uniform(-0.1, 0.1, T)) * slot_scale
        pv = solar_shape * rng.uniform(0.7, 1.0, T) * slot_scale
        producer = i < n_prod
        if producer:
            generation = pv * rng.uniform(1.0, 2.5)
        else:
            generation = np.minimum(pv * rng.uniform(0.0, 0.4), 0.5 * demand)

        daily = demand.mean() * (24 * 60 / slot_minutes)
        soc_max = rng.uniform(0.15, 0.3) * daily
        u_max = soc_max * rng.uniform(0.1, 0.25)
        rho_c, rho_d = rng.uniform(0.85, 0.95, 2)
        soc_init = rng.uniform(0.0, 0.5) * soc_max
        if not producer:
            # keep stored energy usable for own demand so it is never exported
            usable = np.minimum(u_max, demand - generation).sum() / rho_d
            soc_init = min(soc_init, 0.9 * usable)
        params = BuildingParams(float(rho_c), float(rho_d), float(u_max), float(soc_max),
                                float(soc_init))
        buildings.append(Building(params, BuildingSeries(demand, generation), f"b{i + 1}"))
    return Scenario(Horizon(T, slot_minutes), prices, tuple(buildings),
                    f"gen-s{seed}-n{N}-t{T}", seed, noise_sigma)


# -- files -------------------------------------------------------------------

def _read_csv(path: Path, required: list[str], optional: list[str] = ()):
    if not path.exists():
        raise LoadError(f"{path}: file not found")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:len(required)] != required:
            raise LoadError(f"{path}, line 1: header must start with {','.join(required)}")
        extra = header[len(required):]
        if extra and extra != list(optional):
            raise LoadError(f"{path}, line 1: unexpected columns {extra}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise LoadError(f"{path}, line {lineno}: expected {len(header)} fields")
            try:
                slot = int(row[0])
                vals = [float(c) for c in row[1:]]
            except ValueError:
                raise LoadError(f"{path}, line {lineno}: malformed number") from None
            if slot != len(rows) + 1:
                raise LoadError(f"{path}, line {lineno}: slots must run 1, 2, ... "
                                f"(got {slot})")
            if not all(np.isfinite(vals)):
                raise LoadError(f"{path}, line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise LoadError(f"{path}: no data rows")
    return header, np.array(rows)


def load_scenario(directory: str | os.PathLike) -> Scenario:
    """Read and validate a scenario directory."""
    root = Path(directory)
    _, price_rows = _read_csv(root / "prices.csv", PRICE_HEADER)
    for t, (b, s) in enumerate(price_rows, start=1):
        if not b > s > 0:
            raise LoadError(f"{root / 'prices.csv'}, line {t + 1}: slot {t} violates "
                            f"buy > sell > 0 (buy={b}, sell={s})")
    prices = PriceSeries(price_rows[:, 0], price_rows[:, 1])
    T = len(prices)

    bpath = root / "buildings.json"
    if not bpath.exists():
        raise LoadError(f"{bpath}: file not found")
    try:
        spec = json.loads(bpath.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"{bpath}, line {exc.lineno}: {exc.msg}") from None
    if not isinstance(spec, dict) or not spec:
        raise LoadError(f"{bpath}: needs a non-empty object of buildings")

    buildings, pd, pg = [], [], []
    keys = ("rho_c", "rho_d", "u_max", "soc_max", "soc_init", "series_file")
    for name, entry in spec.items():
        missing = [k for k in keys if k not in entry]
        if missing:
            raise LoadError(f"{bpath}: building {name!r} lacks {missing}")
        try:
            params = BuildingParams(float(entry["rho_c"]), float(entry["rho_d"]),
                                    float(entry["u_max"]), float(entry["soc_max"]),
                                    float(entry["soc_init"]))
        except (InputError, TypeError, ValueError) as exc:
            raise LoadError(f"{bpath}: building {name!r}: {exc}") from None
        spath = root / entry["series_file"]
        header, rows = _read_csv(spath, SERIES_HEADER, PRED_HEADER)
        if rows.shape[0] != T:
            raise LoadError(f"{spath}: {rows.shape[0]} slots, prices have {T}")
        neg = np.argwhere(rows < 0)
        if neg.size:
            r = int(neg[0, 0])
            raise LoadError(f"{spath}, line {r + 2}: negative energy value")
        buildings.append(Building(params, BuildingSeries(rows[:, 0], rows[:, 1]), str(name)))
        if len(header) > len(SERIES_HEADER):
            pd.append(rows[:, 2])
            pg.append(rows[:, 3])
    if pd and len(pd) != len(buildings):
        raise LoadError(f"{root}: prediction columns must be given for all buildings or none")
    pred_d = np.array(pd) if pd else None
    pred_g = np.array(pg) if pg else None
    return Scenario(Horizon(T), prices, tuple(buildings), root.name, None, 0.0, pred_d, pred_g)


def save_scenario(scenario: Scenario, directory: str | os.PathLike) -> Path:
    """Write ``scenario`` in the layout read by :func:`load_scenario`."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    with (root / "prices.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PRICE_HEADER)
        for t, (b, s) in enumerate(zip(scenario.prices.buy, scenario.prices.sell), start=1):
            w.writerow([t, repr(float(b)), repr(float(s))])
    spec = {}
    has_pred = scenario.pred_demand is not None
    for i, b in enumerate(scenario.buildings):
        name = b.name or f"b{i + 1}"
        fname = f"{name}.csv"
        p = b.params
        spec[name] = {"rho_c": p.charge_efficiency, "rho_d": p.discharge_efficiency,
                      "u_max": p.max_charge_rate, "soc_max": p.soc_max,
                      "soc_init": p.soc_init, "series_file": fname}
        with (root / fname).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERIES_HEADER + (PRED_HEADER if has_pred else []))
            for t in range(scenario.T):
                row = [t + 1, repr(float(b.series.demand[t])),
                       repr(float(b.series.generation[t]))]
                if has_pred:
                    row += [repr(float(scenario.pred_demand[i, t])),
                            repr(float(scenario.pred_generation[i, t]))]
                w.writerow(row)
    (root / "buildings.json").write_text(json.dumps(spec, indent=2) + "\n")
    return root
