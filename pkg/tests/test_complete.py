import numpy as np
import pytest
from hypothesis import given, strategies as st

from cara_nonneg.complete import (AgentSpec, constrained_consumption, positivity_certificate,
                                  present_value, psi, random_agent, solve_lambda_star,
                                  solve_unconstrained, utility)
from cara_nonneg.market import random_spd
from cara_nonneg.probtree import build_tree, random_tree

from conftest import seeds


def _instance(seed, horizon=None):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, int(rng.integers(0, 4)) if horizon is None else horizon)
    return t, random_agent(rng, t), random_spd(rng, t)


def test_agent_validation():
    with pytest.raises(ValueError):
        AgentSpec(0.0, 0.1, ([1.0],))
    with pytest.raises(ValueError):
        AgentSpec(1.0, -0.1, ([1.0],))
    with pytest.raises(ValueError):
        AgentSpec(1.0, 0.1, ([-1.0],))


def test_single_node_consumes_endowment():
    t = build_tree([])
    a = AgentSpec(2.0, 0.0, ([0.8],))
    for f in (solve_unconstrained, constrained_consumption):
        assert np.isclose(f(t, a, [[1.0]]).consumption[0][0], 0.8)


def test_spd_must_be_positive():
    t = build_tree([2])
    a = AgentSpec(1.0, 0.0, ([1.0], [1.0, 1.0]))
    with pytest.raises(ValueError):
        constrained_consumption(t, a, [[1.0], [0.0, 1.0]])


def test_zero_endowment_rejected():
    t = build_tree([2])
    a = AgentSpec(1.0, 0.0, ([0.0], [0.0, 0.0]))
    with pytest.raises(ValueError):
        solve_lambda_star(t, a, [[1.0], [1.0, 1.0]])


@given(seeds)
def test_unconstrained_first_order_conditions(seed):
    t, a, xi = _instance(seed)
    s = solve_unconstrained(t, a, xi)
    assert s.budget_residual < 1e-10
    # gamma e^{-rho k} e^{-gamma c_k} = lambda xi_k at every node
    for k in range(t.horizon + 1):
        lhs = a.gamma * np.exp(-a.rho * k - a.gamma * s.consumption[k])
        assert np.allclose(lhs, s.multiplier * xi[k], rtol=1e-10)


@given(seeds)
def test_psi_decreasing_and_solved(seed):
    t, a, xi = _instance(seed)
    lam = solve_lambda_star(t, a, xi)
    pv = present_value(t, xi, a.on(t))
    assert np.isclose(psi(t, a, xi, lam), pv, rtol=1e-11, atol=1e-13)
    grid = lam * np.exp(np.linspace(-2, 2, 9))
    vals = [psi(t, a, xi, g) for g in grid]
    assert all(x >= y - 1e-14 for x, y in zip(vals, vals[1:]))


@given(seeds)
def test_constrained_is_positive_part(seed):
    t, a, xi = _instance(seed)
    s = constrained_consumption(t, a, xi)
    u = solve_unconstrained(t, a, xi)
    assert min(c.min() for c in s.consumption) >= 0
    assert s.budget_residual < 1e-10
    # the constrained multiplier is never below the unconstrained one
    assert s.multiplier >= u.multiplier * (1 - 1e-12)
    # relaxing c >= 0 can only help
    assert utility(t, a, u.consumption) >= s.utility - 1e-12
    for k in range(t.horizon + 1):
        lb = np.log(a.gamma) - a.rho * k - np.log(xi[k])
        assert np.allclose(s.consumption[k], np.maximum(lb - np.log(s.multiplier), 0) / a.gamma)


@given(seeds)
def test_constrained_beats_perturbations(seed):
    t, a, xi = _instance(seed)
    s = constrained_consumption(t, a, xi)
    rng = np.random.default_rng(seed + 1)
    q = t.flat_probs() * t.flatten(xi)
    c = t.flatten(s.consumption)
    for _ in range(5):
        d = rng.normal(size=c.size)
        d -= (q @ d) / (q @ q) * q
        c2 = c + 0.05 * d
        if c2.min() < 0:
            continue
        assert utility(t, a, t.unflatten(c2)) <= s.utility + 1e-12


def test_positivity_certificate():
    t = build_tree([2], [[0.5, 0.5]])
    xi = [[1.0], [0.8, 1.2]]
    rich = AgentSpec(1.0, 0.1, ([5.0], [5.0, 5.0]))
    ok, c = positivity_certificate(t, rich, xi, C=2.0)
    assert ok and min(x.min() for x in c) > 0
    ref = constrained_consumption(t, rich, xi).consumption
    assert max(np.abs(x - y).max() for x, y in zip(c, ref)) < 1e-12
    poor = AgentSpec(1.0, 0.1, ([0.1], [0.0, 0.1]))
    assert positivity_certificate(t, poor, xi, C=2.0) == (False, None)
    # xi must stay strictly below C
    assert positivity_certificate(t, rich, xi, C=1.2)[0] is False


def test_binding_example():
    t = build_tree([2], [[0.5, 0.5]])
    a = AgentSpec(1.0, 0.0, ([0.0], [1.0, 0.0]))
    s = constrained_consumption(t, a, [[1.0], [0.2, 5.0]])
    # the expensive state gets nothing
    assert s.consumption[1][1] == 0.0 and s.consumption[1][0] > 0
