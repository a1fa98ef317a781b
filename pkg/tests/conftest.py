import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from coalgrid.model import Building, BuildingParams, BuildingSeries, PriceSeries

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def no_battery(demand, generation, name=""):
    params = BuildingParams(0.9, 0.9, 0.0, 0.0, 0.0)
    return Building(params, BuildingSeries(demand, generation), name)


def flat_prices(T, buy=0.2, sell=0.1):
    return PriceSeries(np.full(T, buy), np.full(T, sell))


def random_instance(rng, T, battery=True):
    """One building and prices drawn from ``rng``."""
    soc_max = rng.uniform(0.5, 3.0) if battery else 0.0
    params = BuildingParams(rng.uniform(0.8, 0.99), rng.uniform(0.8, 0.99),
                            rng.uniform(0.2, 1.5) if battery else 0.0, soc_max,
                            rng.uniform(0, soc_max))
    series = BuildingSeries(rng.uniform(0, 2, T), rng.uniform(0, 2, T))
    sell = rng.uniform(0.01, 0.2, T)
    prices = PriceSeries(sell + rng.uniform(0.01, 0.3, T), sell)
    return params, series, prices


@st.composite
def instances(draw, max_T=6):
    seed = draw(st.integers(0, 2**32 - 1))
    T = draw(st.integers(1, max_T))
    battery = draw(st.booleans())
    return random_instance(np.random.default_rng(seed), T, battery)


@pytest.fixture
def pair_no_battery():
    """A sells one unit, B buys one unit, in a single slot."""
    a = no_battery([0.0], [1.0], "A")
    b = no_battery([1.0], [0.0], "B")
    return [a, b], flat_prices(1)
