import numpy as np
import pytest
from hypothesis import given

from cara_nonneg.errors import ArbitrageError
from cara_nonneg.market import (MarketSpec, aggregate_spd, complete_market, implied_rate,
                                market_from_dict, no_arbitrage, random_incomplete_market,
                                random_spd, random_type_c_market, type_c_market, verify_spd)
from cara_nonneg.probtree import build_tree, random_tree

from conftest import seeds


@given(seeds)
def test_complete_market_priced_by_its_spd(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, int(rng.integers(1, 4)))
    xi = random_spd(rng, t)
    m = complete_market(t, xi)
    assert verify_spd(m, xi).passed
    M = aggregate_spd(m)
    assert max(np.abs(a - b).max() for a, b in zip(M, xi)) < 1e-10


@given(seeds)
def test_type_c_aggregate_spd_is_M(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, int(rng.integers(1, 3)))
    m = random_type_c_market(rng, t)
    M = aggregate_spd(m)
    assert verify_spd(m, M).passed
    for k in range(1, t.horizon + 1):
        assert np.allclose(m.project(k, M[k]), M[k])


@given(seeds)
def test_random_incomplete_market_is_arbitrage_free(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, 2)
    m = random_incomplete_market(rng, t)
    ok, xi = no_arbitrage(m)
    assert ok
    assert verify_spd(m, xi, tol=1e-8).max_residual < 1e-8


def test_arbitrage_detected():
    t = build_tree([2])
    # asset pays at least 1 in every state but costs 0.5 with zero rate
    m = MarketSpec(t, ([[1.0], [2.0]],), ([[0.5]],), ([0.0],))
    assert not no_arbitrage(m)[0]
    with pytest.raises(ArbitrageError):
        aggregate_spd(m)


def test_implied_rate_matches_bond_price():
    t = build_tree([2], [[0.5, 0.5]])
    r = implied_rate(t, [[1.0], [0.8, 1.0]])
    assert np.isclose(r[0][0], 1 / 0.9 - 1)


def test_verify_spd_reports_location():
    t = build_tree([2])
    m = complete_market(t, [[1.0], [0.9, 1.1]])
    rep = verify_spd(m, [[1.0], [0.9, 1.3]])
    assert not rep.passed and rep.location[0] == 1


def test_type_c_rejects_non_measurable_M():
    t = build_tree([4])
    with pytest.raises(ValueError):
        type_c_market(t, [[0, 0, 1, 1]], [[1.0], [0.7, 0.8, 1.0, 1.0]])


def test_type_c_wealth_space_checked():
    t = build_tree([4])
    pay = np.array([[1.0], [1.0], [0.0], [0.0]])
    # one block indicator plus the bond cannot span L^2 of three blocks
    with pytest.raises(ValueError):
        MarketSpec(t, (pay,), ([[0.4]],), ([0.0],), ([[0, 0, 1, 2]]))


def test_market_from_dict_variants():
    t = build_tree([2])
    m1 = market_from_dict(t, {"spd": [[1.0], [0.9, 1.1]]})
    m2 = market_from_dict(t, {"assets": [[[1.0], [0.5, 1.5]]], "rate": [[0.0]]})
    assert no_arbitrage(m1)[0] and no_arbitrage(m2)[0]
    with pytest.raises(ValueError):
        market_from_dict(t, {})
