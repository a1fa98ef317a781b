"""Coalition structures, the aggregate-trade merge bound and formation.

Two merge evaluators plug into :func:`bottom_up_form`:

* :class:`LimitedInfoEvaluator` sees only each coalition's value and its
  aggregate grid trade ``Q(t)`` and scores a merge by the guaranteed saving
  ``sum_{t: Qj*Qk < 0} (buy - sell) * min(|Qj|, |Qk|)``.
* :class:`FullInfoEvaluator` solves the merged coalition outright.

Coalition values are memoised in a :class:`CoalitionValues` table, which
also counts the ADMM iterations spent filling it.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .admm import AdmmSettings, admm_solve
from .model import (Building, BudgetExceeded, DispatchPlan, InputError, PriceSeries,
                    check_feasible, horizon_cost, split_signed)
from .solver import solve_decentralised

MERGE_EPS = 1e-9
BALANCE_TOL = 1e-6


# -- primitives ----------------------------------------------------------------

def aggregate_trade(plans: Sequence[DispatchPlan]) -> np.ndarray:
    """Net grid trade of a coalition per slot, ``Q(t) = sum_i G_tot_i(t)``."""
    if not plans:
        raise InputError("aggregate_trade needs at least one plan")
    return np.sum([p.grid_total for p in plans], axis=0)


def merge_gain(trade_j, trade_k, prices: PriceSeries) -> float:
    """Saving from netting two coalitions' opposing grid trades."""
    qj = np.asarray(trade_j, dtype=float)
    qk = np.asarray(trade_k, dtype=float)
    if qj.shape != qk.shape or qj.shape[0] != len(prices):
        raise InputError("aggregate trades and prices must share a length")
    opposing = qj * qk < 0
    vol = np.minimum(np.abs(qj), np.abs(qk))
    return float(np.sum(prices.spread[opposing] * vol[opposing]))


def limited_info_upper_bound(value_j: float, value_k: float, gain: float) -> float:
    """Upper bound on the merged coalition's value."""
    if gain < 0:
        raise InputError("gain must be non-negative")
    return value_j + value_k - gain


def _rebuilt(plan: DispatchPlan, g_tot: np.ndarray, c_tot: np.ndarray) -> DispatchPlan:
    gb, gs = split_signed(g_tot)
    cb, cs = split_signed(c_tot)
    return DispatchPlan(gb, gs, cb, cs, plan.charge, plan.discharge, plan.soc)


def construct_feasible_merge(plans_j: Sequence[DispatchPlan], plans_k: Sequence[DispatchPlan],
                             prices: PriceSeries,
                             buildings_j: Sequence[Building] | None = None,
                             buildings_k: Sequence[Building] | None = None,
                             ) -> tuple[list[DispatchPlan], float]:
    """Explicit joint strategy attaining the limited-information bound.

    Wherever one side buys (``Q > 0``) while the other sells, ``min(|Qj|, |Qk|)``
    is moved from the grid to internal trades: the buying side's purchases and
    the selling side's sales each shrink by that amount, shared among members
    in proportion to their own purchases (or sales).  Battery controls are
    untouched.  Returns the plans for ``plans_j + plans_k`` and their cost.

    When buildings are given the inputs are checked for feasibility first.
    """
    plans_j, plans_k = list(plans_j), list(plans_k)
    if not plans_j or not plans_k:
        raise InputError("both sides need at least one plan")
    for plans, blds in ((plans_j, buildings_j), (plans_k, buildings_k)):
        c = np.sum([p.coal_total for p in plans], axis=0)
        if np.max(np.abs(c)) > BALANCE_TOL:
            raise InputError("input coalition trades are not balanced")
        if blds is not None:
            if len(blds) != len(plans):
                raise InputError("one building per plan required")
            for p, b in zip(plans, blds):
                rep = check_feasible(p, b.params, b.series)
                if not rep.ok:
                    raise InputError(f"infeasible input plan: {rep.constraint} "
                                     f"at slot {rep.slot}")

    g = [p.grid_total.copy() for p in plans_j + plans_k]
    c = [p.coal_total.copy() for p in plans_j + plans_k]
    nj = len(plans_j)
    qj = np.sum(g[:nj], axis=0)
    qk = np.sum(g[nj:], axis=0)
    for t in np.flatnonzero(qj * qk < 0):
        delta = min(abs(qj[t]), abs(qk[t]))
        buyers, sellers = (range(nj), range(nj, len(g))) if qj[t] > 0 else \
            (range(nj, len(g)), range(nj))
        bought = sum(max(g[i][t], 0.0) for i in buyers)
        sold = sum(max(-g[i][t], 0.0) for i in sellers)
        for i in buyers:
            share = delta * max(g[i][t], 0.0) / bought
            g[i][t] -= share
            c[i][t] += share
        for i in sellers:
            share = delta * max(-g[i][t], 0.0) / sold
            g[i][t] += share
            c[i][t] -= share
    merged = [_rebuilt(p, gi, ci) for p, gi, ci in zip(plans_j + plans_k, g, c)]
    return merged, float(sum(horizon_cost(p, prices) for p in merged))


# -- coalition values ----------------------------------------------------------

@dataclass
class CoalitionEval:
    value: float
    plans: dict  # member -> DispatchPlan
    iterations: int = 0
    converged: bool = True


class CoalitionValues:
    """Memo of coalition values ``V(S)`` keyed by member set.

    A coalition's value is the cost of the cheapest feasible joint plan found
    for it.  Singletons are solved directly; larger sets by ADMM.  The table
    counts ADMM iterations it ran and enforces an optional wall-clock deadline
    (checked before every solve).
    """

    def __init__(self, buildings: Sequence[Building], prices: PriceSeries,
                 admm: AdmmSettings | None = None, deadline: float | None = None):
        self.buildings = list(buildings)
        self.prices = prices
        self.admm = admm or AdmmSettings()
        self.deadline = deadline
        self.admm_iterations = 0
        self.admm_solves = 0
        self.nonconverged = 0
        self._table: dict[frozenset, CoalitionEval] = {}

    def check_deadline(self):
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise BudgetExceeded("wall-clock budget exhausted")

    def __contains__(self, members) -> bool:
        return frozenset(members) in self._table

    def get(self, members) -> CoalitionEval:
        key = frozenset(members)
        if not key:
            raise InputError("empty coalition")
        hit = self._table.get(key)
        if hit is not None:
            return hit
        self.check_deadline()
        members = sorted(key)
        if len(members) == 1:
            b = self.buildings[members[0]]
            plan, value = solve_decentralised(b.params, b.series, self.prices, self.admm.solve)
            ev = CoalitionEval(value, {members[0]: plan})
        else:
            res = admm_solve([self.buildings[i] for i in members], self.prices, self.admm)
            self.admm_iterations += res.iterations
            self.admm_solves += 1
            self.nonconverged += int(not res.converged)
            ev = CoalitionEval(res.cost, dict(zip(members, res.plans)), res.iterations,
                               res.converged)
        self._table[key] = ev
        return ev

    def offer(self, members, value: float, plans: dict) -> CoalitionEval:
        """Record a feasible joint plan; kept if it beats the stored one."""
        key = frozenset(members)
        cur = self._table.get(key)
        if cur is None or value < cur.value:
            cur = CoalitionEval(value, dict(plans), 0, True)
            self._table[key] = cur
        return cur

    def value(self, members) -> float:
        return self.get(members).value


def coalition_value(members, buildings: Sequence[Building], prices: PriceSeries,
                    admm: AdmmSettings | None = None) -> tuple[float, list[DispatchPlan]]:
    """``V(S)`` and member plans (ordered by member index)."""
    ev = CoalitionValues(buildings, prices, admm).get(members)
    return ev.value, [ev.plans[i] for i in sorted(ev.plans)]


# -- structures ----------------------------------------------------------------

@dataclass(frozen=True)
class MergeCandidate:
    left: int
    right: int
    gain: float


@dataclass(frozen=True)
class CoalitionStructure:
    coalitions: tuple
    values: tuple
    plans: dict = field(default_factory=dict, compare=False, repr=False)
    rounds: int = 0
    passes: int = 0
    admm_iterations: int = 0

    def __post_init__(self):
        coals = tuple(tuple(sorted(int(i) for i in c)) for c in self.coalitions)
        object.__setattr__(self, "coalitions", coals)
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.values and len(coals) != len(self.values):
            raise InputError("one value per coalition required")
        if any(not c for c in coals):
            raise InputError("coalitions must be non-empty")
        members = [i for c in coals for i in c]
        if len(members) != len(set(members)):
            raise InputError("coalitions overlap")

    @property
    def total(self) -> float:
        return float(sum(self.values))

    @property
    def members(self) -> list[int]:
        return sorted(i for c in self.coalitions for i in c)

    def is_partition_of(self, agents, c_max: int | None = None) -> bool:
        if self.members != sorted(agents):
            return False
        return c_max is None or all(len(c) <= c_max for c in self.coalitions)

    def to_dict(self) -> dict:
        return {"coalitions": [list(c) for c in self.coalitions],
                "values": list(self.values), "total": self.total}


def structure_value(structure: CoalitionStructure, buildings: Sequence[Building] | None = None,
                    prices: PriceSeries | None = None, admm: AdmmSettings | None = None) -> float:
    """Sum of coalition values; recomputed when the structure carries none."""
    if structure.values:
        return structure.total
    if buildings is None or prices is None:
        raise InputError("structure has no stored values; pass buildings and prices")
    table = CoalitionValues(buildings, prices, admm)
    return float(sum(table.value(c) for c in structure.coalitions))


# -- evaluators ----------------------------------------------------------------

class LimitedInfoEvaluator:
    """Scores merges from coalition values and aggregate trades alone."""

    name = "limited_info"

    def __init__(self, prices: PriceSeries):
        self.prices = prices

    def gain(self, value_j: float, value_k: float, trade_j, trade_k) -> float:
        bound = limited_info_upper_bound(value_j, value_k,
                                         merge_gain(trade_j, trade_k, self.prices))
        return value_j + value_k - bound


class FullInfoEvaluator:
    """Scores merges by solving the merged coalition."""

    name = "full_info"

    def gain(self, table: CoalitionValues, members_j, members_k) -> float:
        merged = tuple(members_j) + tuple(members_k)
        return table.value(members_j) + table.value(members_k) - table.value(merged)


def _coalition_plans(ev: CoalitionEval):
    return [ev.plans[i] for i in sorted(ev.plans)]


def bottom_up_form(agents: Sequence[int], evaluator, c_max: int,
                   buildings: Sequence[Building], prices: PriceSeries,
                   admm: AdmmSettings | None = None,
                   table: CoalitionValues | None = None) -> CoalitionStructure:
    """Greedy pairwise merging of coalitions until no merge pays.

    Each pass scores every pair of current coalitions whose union respects
    ``c_max``, sorts candidates by gain (descending; ties by index pair) and
    accepts positive-gain merges whose members are still free.  Coalitions
    left unpaired carry over.  The loop stops on the first pass without a
    merge.
    """
    if c_max < 1:
        raise InputError("c_max must be at least 1")
    table = table or CoalitionValues(buildings, prices, admm)
    start_iters = table.admm_iterations
    current = sorted((i,) for i in agents)
    rounds = passes = 0
    limited = isinstance(evaluator, LimitedInfoEvaluator)
    while True:
        passes += 1
        table.check_deadline()
        evals = [table.get(a) for a in current]
        trades = [aggregate_trade(_coalition_plans(ev)) for ev in evals] if limited else None
        cands = []
        for j in range(len(current)):
            for k in range(j + 1, len(current)):
                if len(current[j]) + len(current[k]) > c_max:
                    continue
                if limited:
                    g = evaluator.gain(evals[j].value, evals[k].value, trades[j], trades[k])
                else:
                    g = evaluator.gain(table, current[j], current[k])
                cands.append(MergeCandidate(j, k, g))
        cands.sort(key=lambda m: (-m.gain, m.left, m.right))
        used: set[int] = set()
        new = []
        for m in cands:
            if m.gain > MERGE_EPS and m.left not in used and m.right not in used:
                used.update((m.left, m.right))
                new.append((m.left, m.right))
        if not new:
            break
        rounds += 1
        for j, k in new:
            merged = tuple(sorted(current[j] + current[k]))
            if limited:
                plans, cost = construct_feasible_merge(
                    _coalition_plans(evals[j]), _coalition_plans(evals[k]), prices)
                table.get(merged)
                members = sorted(current[j]) + sorted(current[k])
                table.offer(merged, cost, dict(zip(members, plans)))
        nxt = [tuple(sorted(current[j] + current[k])) for j, k in new]
        nxt += [current[i] for i in range(len(current)) if i not in used]
        current = sorted(nxt)
    evals = [table.get(a) for a in current]
    plans = {i: p for ev in evals for i, p in ev.plans.items()}
    return CoalitionStructure(tuple(current), tuple(ev.value for ev in evals), plans,
                              rounds, passes, table.admm_iterations - start_iters)


# -- exhaustive partitioning ---------------------------------------------------

def count_partitions(n: int, c_max: int) -> int:
    """Number of partitions of an ``n``-set into blocks of size <= ``c_max``."""
    counts = [1] + [0] * n
    for m in range(1, n + 1):
        counts[m] = sum(math.comb(m - 1, k - 1) * counts[m - k]
                        for k in range(1, min(c_max, m) + 1))
    return counts[n]


def enumerate_partitions(items: Sequence[int], c_max: int) -> Iterator[tuple]:
    """Yield every partition of ``items`` with blocks of size <= ``c_max``.

    Walks restricted growth strings: item ``i`` joins an existing block or
    opens block ``max + 1``; blocks that would exceed ``c_max`` are skipped.
    """
    items = list(items)
    n = len(items)
    if n == 0:
        yield ()
        return
    labels = [0] * n
    sizes = [0] * (n + 1)

    def rec(i, n_blocks):
        if i == n:
            blocks = [[] for _ in range(n_blocks)]
            for item, lab in zip(items, labels):
                blocks[lab].append(item)
            yield tuple(tuple(b) for b in blocks)
            return
        for lab in range(n_blocks + 1):
            if sizes[lab] >= c_max:
                continue
            labels[i] = lab
            sizes[lab] += 1
            yield from rec(i + 1, max(n_blocks, lab + 1))
            sizes[lab] -= 1

    yield from rec(0, 0)


def optimal_partition(agents: Sequence[int], c_max: int, buildings: Sequence[Building],
                      prices: PriceSeries, admm: AdmmSettings | None = None,
                      budget: int = 5000,
                      table: CoalitionValues | None = None) -> CoalitionStructure:
    """Best size-limited coalition structure by exhaustive enumeration.

    Raises :class:`BudgetExceeded` when more than ``budget`` partitions exist.
    Ties go to fewer coalitions, then to the lexicographically smaller
    structure.
    """
    if c_max < 1:
        raise InputError("c_max must be at least 1")
    agents = sorted(agents)
    n_parts = count_partitions(len(agents), c_max)
    if n_parts > budget:
        raise BudgetExceeded(f"{n_parts} partitions exceed the budget of {budget}")
    table = table or CoalitionValues(buildings, prices, admm)
    start_iters = table.admm_iterations
    best_key, best = None, None
    for part in enumerate_partitions(agents, c_max):
        table.check_deadline()
        total = sum(table.value(b) for b in part)
        key = (total, len(part), part)
        if best_key is None or key < best_key:
            best_key, best = key, part
    evals = [table.get(b) for b in best]
    plans = {i: p for ev in evals for i, p in ev.plans.items()}
    return CoalitionStructure(best, tuple(ev.value for ev in evals), plans, 0, 1,
                              table.admm_iterations - start_iters)
