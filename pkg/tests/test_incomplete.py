import numpy as np
import pytest
from hypothesis import given

from cara_nonneg.complete import AgentSpec, constrained_consumption, random_agent
from cara_nonneg.incomplete import (KKTSolution, one_period_closed_form, solve_kkt,
                                    strategy_consumption, verify_kkt)
from cara_nonneg.market import (complete_market, random_incomplete_market, random_spd,
                                random_type_c_market, type_c_market)
from cara_nonneg.probtree import build_tree, random_tree

from conftest import seeds


def _gap(a, b):
    return max(float(np.abs(x - y).max()) for x, y in zip(a, b))


@given(seeds)
def test_complete_market_reduces_to_closed_form(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, int(rng.integers(1, 4)))
    xi = random_spd(rng, t)
    a = random_agent(rng, t)
    s = solve_kkt(a, complete_market(t, xi))
    assert _gap(s.consumption, constrained_consumption(t, a, xi).consumption) < 1e-8


@given(seeds)
def test_kkt_certified_on_incomplete_markets(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, int(rng.integers(1, 4)))
    m = random_incomplete_market(rng, t) if seed % 2 else random_type_c_market(rng, t)
    a = random_agent(rng, t)
    s = solve_kkt(a, m)
    assert verify_kkt(s, a, m).passed
    # the strategy finances the consumption
    assert _gap(strategy_consumption(a, m, s.strategy), s.consumption) < 1e-9


@given(seeds)
def test_one_period_closed_form_matches(seed):
    rng = np.random.default_rng(seed)
    t = build_tree([int(rng.integers(2, 6))])
    m = random_type_c_market(rng, t)
    a = random_agent(rng, t)
    cf = one_period_closed_form(a, m)
    s = solve_kkt(a, m)
    assert abs(cf.c0 - s.consumption[0][0]) < 1e-8
    assert np.abs(cf.c1 - s.consumption[1]).max() < 1e-8


def test_essinf_branch():
    t = build_tree([4], [[0.2, 0.3, 0.25, 0.25]])
    m = type_c_market(t, [[0, 0, 1, 1]], [[1.0], [0.7, 0.7, 1.1, 1.1]])
    a = AgentSpec(1.0, 0.02, ([0.3], [0.0, 1.2, 0.2, 0.9]))
    cf = one_period_closed_form(a, m)
    assert list(cf.interior) == [True, True, False, False]
    # on the priced-out block consumption is the endowment above its block minimum
    assert np.allclose(cf.c1[2:], [0.0, 0.7])
    s = solve_kkt(a, m)
    assert np.abs(cf.c1 - s.consumption[1]).max() < 1e-10


def test_verify_kkt_flags_wrong_solution():
    t = build_tree([2])
    m = complete_market(t, [[1.0], [0.8, 1.2]])
    a = AgentSpec(1.0, 0.0, ([0.5], [0.5, 0.5]))
    s = solve_kkt(a, m)
    bad = KKTSolution([s.consumption[0] + 0.1, s.consumption[1]], s.strategy, s.multipliers,
                      s.wealth, s.utility, s.multipliers_unique, s.iterations)
    assert not verify_kkt(bad, a, m).passed


def test_closed_form_needs_type_c():
    t = build_tree([2, 2])
    m = complete_market(t, random_spd(np.random.default_rng(0), t))
    with pytest.raises(ValueError):
        one_period_closed_form(AgentSpec(1.0, 0.0, ([1.0], [1.0, 1.0], [1, 1, 1, 1])), m)
