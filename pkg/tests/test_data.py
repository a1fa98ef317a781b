import itertools
import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coalgrid.coalition import merge_gain
from coalgrid.data import LoadError, generate_scenario, load_scenario, save_scenario
from coalgrid.model import InputError
from coalgrid.solver import solve_decentralised

FIXTURE = Path(__file__).parent / "fixtures" / "two_buildings"


@pytest.fixture
def scenario_dir(tmp_path):
    dst = tmp_path / "sc"
    shutil.copytree(FIXTURE, dst)
    return dst


def rewrite(path, line_no, text):
    lines = path.read_text().splitlines()
    lines[line_no - 1] = text
    path.write_text("\n".join(lines) + "\n")


def same_scenario(a, b):
    assert a.T == b.T and a.n_buildings == b.n_buildings
    np.testing.assert_array_equal(a.prices.buy, b.prices.buy)
    np.testing.assert_array_equal(a.prices.sell, b.prices.sell)
    for x, y in zip(a.buildings, b.buildings):
        assert x.params == y.params and x.name == y.name
        np.testing.assert_array_equal(x.series.demand, y.series.demand)
        np.testing.assert_array_equal(x.series.generation, y.series.generation)


class TestFixture:
    def test_contents(self):
        sc = load_scenario(FIXTURE)
        assert sc.n_buildings == 2 and sc.T == 96
        pv, home = sc.buildings
        assert (pv.name, home.name) == ("pv", "home")
        assert home.series.demand.sum() == pytest.approx(28.8, abs=1e-12)
        assert pv.series.generation.sum() == pytest.approx(15.2732, abs=1e-9)
        assert sc.prices.buy[69] == 0.3 and sc.prices.buy[0] == 0.2
        assert home.params.max_charge_rate == 0.0 and pv.params.soc_max == 2.0
        assert sc.pred_demand.shape == (2, 96)

    def test_pair_is_complementary(self):
        sc = load_scenario(FIXTURE)
        q = [solve_decentralised(b.params, b.series, sc.prices)[0].grid_total
             for b in sc.buildings]
        assert merge_gain(q[0], q[1], sc.prices) > 0


class TestLoadErrors:
    def test_sell_above_buy_names_slot(self, scenario_dir):
        rewrite(scenario_dir / "prices.csv", 4, "3,0.2,0.25")
        with pytest.raises(LoadError, match="slot 3") as err:
            load_scenario(scenario_dir)
        assert "prices.csv" in str(err.value) and "line 4" in str(err.value)

    def test_empty_buildings(self, scenario_dir):
        (scenario_dir / "buildings.json").write_text("{}")
        with pytest.raises(LoadError, match="buildings.json"):
            load_scenario(scenario_dir)

    def test_missing_file(self, scenario_dir):
        (scenario_dir / "home.csv").unlink()
        with pytest.raises(LoadError, match="home.csv"):
            load_scenario(scenario_dir)

    def test_malformed_number(self, scenario_dir):
        rewrite(scenario_dir / "pv.csv", 10, "9,abc,0.0,0.1,0.0")
        with pytest.raises(LoadError, match="pv.csv, line 10"):
            load_scenario(scenario_dir)

    def test_negative_energy(self, scenario_dir):
        rewrite(scenario_dir / "home.csv", 5, "4,-0.3,0.0,0.3,0.0")
        with pytest.raises(LoadError, match="line 5"):
            load_scenario(scenario_dir)

    def test_bad_header_and_slot_order(self, scenario_dir):
        rewrite(scenario_dir / "prices.csv", 1, "slot,buy,sell")
        with pytest.raises(LoadError, match="line 1"):
            load_scenario(scenario_dir)
        shutil.copy(FIXTURE / "prices.csv", scenario_dir / "prices.csv")
        rewrite(scenario_dir / "prices.csv", 3, "5,0.2,0.05")
        with pytest.raises(LoadError, match="line 3"):
            load_scenario(scenario_dir)

    def test_bad_battery(self, scenario_dir):
        spec = json.loads((scenario_dir / "buildings.json").read_text())
        spec["pv"]["soc_init"] = 5.0
        (scenario_dir / "buildings.json").write_text(json.dumps(spec))
        with pytest.raises(LoadError, match="pv"):
            load_scenario(scenario_dir)

    def test_length_mismatch(self, scenario_dir):
        path = scenario_dir / "home.csv"
        path.write_text("\n".join(path.read_text().splitlines()[:-1]) + "\n")
        with pytest.raises(LoadError, match="95 slots"):
            load_scenario(scenario_dir)


class TestRoundTrip:
    def test_fixture_round_trip(self, tmp_path):
        sc = load_scenario(FIXTURE)
        save_scenario(sc, tmp_path / "copy")
        again = load_scenario(tmp_path / "copy")
        same_scenario(sc, again)
        np.testing.assert_array_equal(sc.pred_demand, again.pred_demand)

    @settings(max_examples=10)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_generated_round_trip_and_validation(self, seed, n):
        import tempfile
        sc = generate_scenario(seed, n, T=24)
        with tempfile.TemporaryDirectory() as d:
            save_scenario(sc, d)
            same_scenario(sc, load_scenario(d))


class TestGenerator:
    def test_byte_identical(self, tmp_path):
        save_scenario(generate_scenario(11, 3), tmp_path / "a")
        save_scenario(generate_scenario(11, 3), tmp_path / "b")
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_different_seed_differs(self):
        a, b = generate_scenario(1, 2), generate_scenario(2, 2)
        assert not np.array_equal(a.prices.buy, b.prices.buy)

    @pytest.mark.parametrize("seed", range(5))
    def test_no_producers_no_gain(self, seed):
        sc = generate_scenario(seed, 4, producers=0.0)
        qs = [solve_decentralised(b.params, b.series, sc.prices)[0].grid_total
              for b in sc.buildings]
        assert all(np.all(q >= -1e-9) for q in qs)
        for qa, qb in itertools.combinations(qs, 2):
            assert merge_gain(qa, qb, sc.prices) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_producer_consumer_pair_gains(self, seed):
        sc = generate_scenario(seed, 2, producers=0.5)
        qa, qb = [solve_decentralised(b.params, b.series, sc.prices)[0].grid_total
                  for b in sc.buildings]
        assert merge_gain(qa, qb, sc.prices) > 0

    def test_parameter_ranges(self):
        sc = generate_scenario(3, 10)
        assert sc.T == 96
        for b in sc.buildings:
            assert 0.85 <= b.params.charge_efficiency <= 0.95
            assert 0.85 <= b.params.discharge_efficiency <= 0.95
        assert np.all(sc.prices.buy > sc.prices.sell)

    def test_rejects_bad_arguments(self):
        with pytest.raises(InputError):
            generate_scenario(0, 0)
        with pytest.raises(InputError):
            generate_scenario(0, 2, producers=1.5)


class TestForecast:
    def test_exact_first_and_noise_bounds(self):
        sc = generate_scenario(4, 3, noise_sigma=0.1)
        p = sc.forecast(10, 8)
        assert p.length == 9
        true_d = np.array([b.series.demand[10:19] for b in sc.buildings])
        np.testing.assert_array_equal(p.demand[:, 0], true_d[:, 0])
        ratio = p.demand / true_d
        assert np.all(np.abs(ratio - 1) <= 0.1 + 1e-12)
        assert not np.allclose(ratio[:, 1:], 1)
        np.testing.assert_array_equal(sc.forecast(10, 8).demand, p.demand)

    def test_window_truncates_at_horizon(self):
        sc = generate_scenario(4, 2)
        assert sc.forecast(95, 8).length == 1
        assert sc.forecast(90, 8).length == 6
        with pytest.raises(InputError):
            sc.forecast(96, 8)

    def test_no_noise_is_exact(self):
        sc = generate_scenario(4, 2, noise_sigma=0.0)
        p = sc.forecast(3, 4, exact_first=False)
        np.testing.assert_array_equal(p.generation[1], sc.buildings[1].series.generation[3:8])

    def test_loaded_predictions_used(self):
        sc = load_scenario(FIXTURE)
        p = sc.forecast(0, 3, exact_first=False)
        np.testing.assert_array_equal(p.demand, sc.pred_demand[:, :4])

    def test_subset(self):
        sc = generate_scenario(4, 5)
        sub = sc.subset(2)
        assert sub.n_buildings == 2 and sub.buildings == sc.buildings[:2]
