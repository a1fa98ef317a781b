import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coalgrid.model import (BuildingParams, BuildingSeries, DispatchPlan, Horizon,
                            InputError, PriceSeries, balanced_plan, check_feasible,
                            horizon_cost, realized_stage_cost, soc_step, soc_trajectory)
from coalgrid.solver import solve_decentralised

from conftest import instances

P99 = BuildingParams(0.9, 0.9, 1.0, 10.0, 5.0)


def plan_from(gb, gs, cb=None, cs=None, soc_init=0.0):
    T = len(gb)
    z = np.zeros(T)
    return DispatchPlan(gb, gs, z if cb is None else cb, z if cs is None else cs, z, z,
                        np.full(T + 1, soc_init))


class TestTypes:
    @pytest.mark.parametrize("rc,rd", [(0.0, 0.9), (1.0, 0.9), (0.9, 1.2), (0.9, -0.1)])
    def test_efficiency_must_be_open_unit_interval(self, rc, rd):
        with pytest.raises(InputError):
            BuildingParams(rc, rd, 1.0, 1.0, 0.0)

    def test_negative_rate_and_soc_outside_range(self):
        with pytest.raises(InputError):
            BuildingParams(0.9, 0.9, -1.0, 1.0, 0.0)
        with pytest.raises(InputError):
            BuildingParams(0.9, 0.9, 1.0, 1.0, 1.5)

    def test_series_rejects_negative_and_mismatch(self):
        with pytest.raises(InputError):
            BuildingSeries([1.0, -0.1], [0.0, 0.0])
        with pytest.raises(InputError):
            BuildingSeries([1.0], [0.0, 0.0])

    def test_prices_need_buy_above_sell_above_zero(self):
        with pytest.raises(InputError, match="slot 2"):
            PriceSeries([0.2, 0.1], [0.1, 0.1])
        with pytest.raises(InputError):
            PriceSeries([0.2], [0.0])

    def test_horizon_positive(self):
        with pytest.raises(InputError):
            Horizon(0)

    def test_arrays_are_read_only(self):
        s = BuildingSeries([1.0], [0.0])
        with pytest.raises(ValueError):
            s.demand[0] = 2.0

    def test_plan_accessors_and_soc_length(self):
        p = DispatchPlan([1, 0], [0, 2], [0, 1], [3, 0], [0, 0], [0, 0], [0, 0, 0])
        np.testing.assert_array_equal(p.grid_total, [1, -2])
        np.testing.assert_array_equal(p.coal_total, [-3, 1])
        with pytest.raises(InputError):
            DispatchPlan([1, 0], [0, 2], [0, 1], [3, 0], [0, 0], [0, 0], [0, 0])


class TestSocStep:
    def test_zero_input(self):
        assert soc_step(5.0, P99, 0.0, 0.0) == 5.0

    def test_charge(self):
        assert soc_step(5.0, P99, 1.0, 0.0) == pytest.approx(5.9, abs=1e-15)

    def test_discharge(self):
        p = BuildingParams(0.8, 0.8, 1.0, 10.0, 5.0)
        assert soc_step(5.0, p, 0.0, 1.0) == pytest.approx(3.75, abs=1e-15)

    def test_no_bound_check(self):
        assert soc_step(0.0, P99, 0.0, 9.0) == pytest.approx(-10.0)


class TestHorizonCost:
    def test_zero(self):
        assert horizon_cost(plan_from([0, 0], [0, 0]), PriceSeries([0.2, 0.2], [0.1, 0.1])) == 0

    def test_example(self):
        cost = horizon_cost(plan_from([1, 2], [0, 1]), PriceSeries([0.2, 0.2], [0.1, 0.1]))
        assert cost == pytest.approx(0.5, abs=1e-15)

    def test_revenue(self):
        assert horizon_cost(plan_from([0], [1]), PriceSeries([0.2], [0.1])) == pytest.approx(-0.1)

    def test_coalition_trades_are_free(self):
        p = plan_from([1], [0], cb=[5.0], cs=[0.0])
        assert horizon_cost(p, PriceSeries([0.2], [0.1])) == pytest.approx(0.2)

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            horizon_cost(plan_from([1], [0]), PriceSeries([0.2, 0.2], [0.1, 0.1]))

    @given(st.floats(0, 10), st.integers(0, 2**31))
    def test_linear_in_scaling(self, alpha, seed):
        rng = np.random.default_rng(seed)
        gb, gs = rng.uniform(0, 2, 5), rng.uniform(0, 2, 5)
        prices = PriceSeries(rng.uniform(0.2, 0.3, 5), rng.uniform(0.05, 0.1, 5))
        base = horizon_cost(plan_from(gb, gs), prices)
        scaled = horizon_cost(plan_from(alpha * gb, alpha * gs), prices)
        assert scaled == pytest.approx(alpha * base, rel=1e-12, abs=1e-12)


class TestStageCost:
    prices = PriceSeries([0.3, 0.2], [0.1, 0.1])

    def test_empty(self):
        assert realized_stage_cost([], self.prices, 0) == 0.0

    def test_single(self):
        assert realized_stage_cost([plan_from([1, 0], [0, 0])], self.prices, 0) == \
            pytest.approx(0.3)

    def test_opposite_trades_do_not_cancel(self):
        a = plan_from([0, 1], [0, 0])
        b = plan_from([0, 0], [0, 1])
        assert realized_stage_cost([a, b], self.prices, 1) == pytest.approx(0.1)

    def test_out_of_range(self):
        with pytest.raises(InputError):
            realized_stage_cost([], self.prices, 2)


class TestCheckFeasible:
    def balanced_building(self, T=3):
        return BuildingParams(0.9, 0.9, 1.0, 2.0, 0.0), BuildingSeries(np.ones(T), np.ones(T))

    def test_zero_plan_when_demand_equals_generation(self):
        params, series = self.balanced_building()
        assert check_feasible(DispatchPlan.zeros(3), params, series).ok

    def test_perturbed_buy_reports_slot_one_balance(self):
        params, series = self.balanced_building()
        tol = 1e-6
        p = DispatchPlan.zeros(3)
        bad = DispatchPlan(p.grid_buy + np.array([2 * tol, 0, 0]), p.grid_sell, p.coal_buy,
                           p.coal_sell, p.charge, p.discharge, p.soc)
        rep = check_feasible(bad, params, series, tol)
        assert not rep.ok and rep.constraint == "power balance" and rep.slot == 1
        assert not bool(rep)

    def test_catches_soc_and_box_violations(self):
        params, series = self.balanced_building(2)
        over = balanced_plan(params, series, [1.0, 1.0], [0.0, 0.0])
        assert check_feasible(over, params, series).ok
        too_much = balanced_plan(params, series, [1.0, 1.5], [0.0, 0.0])
        assert check_feasible(too_much, params, series).constraint == "charge <= u_max"
        empty = balanced_plan(params, series, [0.0, 0.0], [0.5, 0.0])
        assert check_feasible(empty, params, series).constraint == "soc >= 0"

    def test_wrong_soc_recursion(self):
        params, series = self.balanced_building(2)
        p = balanced_plan(params, series, [1.0, 0.0], [0.0, 0.0])
        bad = DispatchPlan(p.grid_buy, p.grid_sell, p.coal_buy, p.coal_sell, p.charge,
                           p.discharge, [0.0, 0.8, 0.8])
        assert check_feasible(bad, params, series).constraint == "soc dynamics"

    def test_simultaneous_charge_and_discharge_allowed(self):
        params, series = self.balanced_building(1)
        p = balanced_plan(params, series, [0.5], [0.2])
        assert check_feasible(p, params, series).ok

    @given(instances())
    def test_solver_output_is_feasible(self, inst):
        params, series, prices = inst
        plan, _ = solve_decentralised(params, series, prices)
        assert check_feasible(plan, params, series).ok

    @given(instances(), st.floats(1e-9, 1e-3), st.floats(1.0, 100.0))
    def test_monotone_in_tolerance(self, inst, tol, factor):
        params, series, prices = inst
        rng = np.random.default_rng(0)
        T = len(series)
        u = params.max_charge_rate
        plan = balanced_plan(params, series, rng.uniform(0, u + 1e-12, T) * 0.3,
                             rng.uniform(0, u + 1e-12, T) * 0.3)
        if check_feasible(plan, params, series, tol).ok:
            assert check_feasible(plan, params, series, tol * factor).ok

    @given(instances())
    def test_folded_soc_matches_stored(self, inst):
        params, series, prices = inst
        plan, _ = solve_decentralised(params, series, prices)
        soc = params.soc_init
        for t in range(len(series)):
            soc = soc_step(soc, params, plan.charge[t], plan.discharge[t])
            assert abs(soc - plan.soc[t + 1]) <= 1e-6 * len(series)
        np.testing.assert_allclose(soc_trajectory(params, plan.charge, plan.discharge),
                                   plan.soc, atol=1e-12)
