import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cara_nonneg.complete import AgentSpec
from cara_nonneg.equilibrium import (EconomySpec, budget_residuals, candidate_spd, etas,
                                     log_spd_rows, nonuniqueness_scan, normalize_weights,
                                     printed_equations, regime_consistency, solve_equilibrium,
                                     two_agent_economy, two_root_construction,
                                     vanishing_endowment_family)
from cara_nonneg.probtree import build_tree, random_tree

from conftest import seeds


def _economy(rng, n_agents, horizon=2):
    t = random_tree(rng, horizon, max_branch=2)
    agents = tuple(AgentSpec(float(rng.uniform(0.5, 3)), float(rng.uniform(0, 0.2)),
                             tuple(rng.uniform(0.05, 1.5, n) for n in t.sizes))
                   for _ in range(n_agents))
    return EconomySpec(t, agents)


@given(seeds, st.floats(0.01, 100))
def test_candidate_scales_inversely(seed, s):
    rng = np.random.default_rng(seed)
    e = _economy(rng, 3)
    w = rng.uniform(0.2, 3, 3)
    a, b = candidate_spd(w, e), candidate_spd(s * w, e)
    assert all(np.allclose(x / s, y, rtol=1e-12) for x, y in zip(a, b))


@given(seeds)
def test_demands_clear_at_candidate(seed):
    rng = np.random.default_rng(seed)
    e = _economy(rng, int(rng.integers(1, 5)))
    w = rng.uniform(0.2, 3, e.n_agents)
    xi = candidate_spd(w, e)
    g = e.gammas
    for k, eps in enumerate(e.aggregate):
        d = sum(np.maximum(np.log(g[i] / (w[i] * math.exp(e.rhos[i] * k) * xi[k])), 0) / g[i]
                for i in range(e.n_agents))
        assert np.allclose(d, eps, atol=1e-12)
    assert regime_consistency(w, e) == 0


def test_etas_structure():
    rng = np.random.default_rng(0)
    e = _economy(rng, 4)
    eta = etas(rng.uniform(0.5, 2, 4), e.agents, 1)
    assert eta[0] == np.inf and eta[-1] == 0
    assert np.all(np.diff(eta[1:]) <= 1e-15)


def test_log_spd_rows_single_agent():
    lx, reg = log_spd_rows(np.array([[0.3]]), np.array([2.0]), np.array([1.0]))
    assert np.isclose(lx[0], 0.3 - 2.0) and reg[0] == 1


@settings(max_examples=10)
@given(seeds)
def test_solutions_certified(seed):
    rng = np.random.default_rng(seed)
    e = _economy(rng, int(rng.integers(2, 4)))
    for s in solve_equilibrium(e):
        r = s.residuals
        assert np.max(np.abs(r["budget"])) < 1e-8
        assert r["clearing"] < 1e-8 and r["identity"] < 1e-10
        assert r["normalization"] < 1e-12 and r["spd"] < 1e-10


def test_homogeneous_economy_autarky():
    t = build_tree([2, 2], [[0.3, 0.7], [0.5, 0.5, 0.4, 0.6]])
    end = ([1.0], [0.5, 2.0], [0.3, 1.0, 1.5, 0.7])
    e = EconomySpec(t, tuple(AgentSpec(1.5, 0.05, end) for _ in range(3)))
    sols = solve_equilibrium(e)
    assert len(sols) == 1
    for c in sols[0].consumptions:
        assert max(np.abs(x - np.asarray(y)).max() for x, y in zip(c, end)) < 1e-10


def test_single_agent_autarky():
    t = build_tree([3])
    a = AgentSpec(2.0, 0.1, ([0.4], [0.1, 0.9, 2.0]))
    s = solve_equilibrium(EconomySpec(t, (a,)))[0]
    assert max(np.abs(x - y).max() for x, y in zip(s.consumptions[0], a.on(t))) < 1e-10


def test_rejects_zero_endowment():
    t = build_tree([2])
    a = AgentSpec(1.0, 0.0, ([1.0], [0.0, 1.0]))
    with pytest.raises(ValueError):
        solve_equilibrium(EconomySpec(t, (a, a)))


def test_construction_reproduces_printed_roots():
    c = two_root_construction()
    assert all(c["hypotheses"].values())
    assert math.isclose(c["h_max"], c["h_max_formula"], rel_tol=1e-12)
    for r in c["printed_residuals"]:
        assert max(map(abs, r)) < 1e-12
    assert all(c["in_regime"])
    x1, x2 = (x for x, _ in c["roots"])
    assert x1 < c["x_max"] < x2


def test_construction_roots_fail_true_budget():
    # the quoted equations omit agent 2's time-1 consumption, so the
    # constructed pairs miss agent 2's real budget by a wide margin
    c = two_root_construction()
    for r in c["budget_residuals"]:
        assert abs(r[0]) < 1e-12 and abs(r[1]) > 1.0


def test_scan_agrees_with_solver():
    c = two_root_construction()
    e = c["economy"]
    roots = nonuniqueness_scan(e)
    sols = solve_equilibrium(e, n_grid=41)
    assert len(roots) == len(sols)
    for (x, y), s in zip(sorted(roots, key=lambda r: r[1]), sols):
        assert np.allclose(s.weights, [y, x], rtol=1e-6)


def test_scan_roots_solve_budgets():
    e = two_agent_economy((0.5, 0.2), (0.4, 0.9))
    roots = nonuniqueness_scan(e)
    assert roots
    for x, y in roots:
        r = budget_residuals(normalize_weights([y, x], e), e)
        assert np.max(np.abs(r)) < 1e-9


def test_printed_equations_regimes():
    # middle regime at symmetric point
    r = printed_equations(1.0, 1.0, (0.0, 0.0), (0.3, 0.3))
    assert np.isfinite(r).all()


TWO_STATES = build_tree([2], [[0.4, 0.6]])


@given(st.floats(1.0, 50.0))
def test_vanishing_case_i(lam):
    # no endowment at time 0: xi_1 = e^{-eps_1} / lambda for every lambda >= 1
    eps1 = np.array([0.5, 1.2])
    e = EconomySpec(TWO_STATES, (AgentSpec(1.0, 0.0, ([0.0], eps1)),))
    s = vanishing_endowment_family(e, [[1.0], [9.0, 9.0]], weights=[lam])
    assert s.admissible
    assert np.allclose(s.spd[1], np.exp(-eps1) / lam, rtol=1e-14)
    assert s.max_residual() < 1e-10


def test_vanishing_case_i_needs_lambda_at_least_one():
    e = EconomySpec(TWO_STATES, (AgentSpec(1.0, 0.0, ([0.0], [0.5, 1.2])),))
    s = vanishing_endowment_family(e, [[1.0], [9.0, 9.0]], weights=[0.5])
    assert not s.admissible and s.max_residual() > 0.1


@given(st.floats(1.0001, 50.0))
def test_vanishing_case_ii(scale):
    eps0, eps11 = 0.3, 0.5
    y = math.exp(eps0) * scale
    e = EconomySpec(TWO_STATES, (AgentSpec(1.0, 0.0, ([eps0], [eps11, 0.0])),))
    s = vanishing_endowment_family(e, [[1.0], [0.0, y]])
    assert s.admissible
    assert np.isclose(s.weights[0], math.exp(-eps0), rtol=1e-12)
    assert np.allclose(s.spd[1], [math.exp(eps0 - eps11), y], rtol=1e-12)
    assert s.max_residual() < 1e-10


def test_vanishing_rejects_negative_X():
    e = EconomySpec(TWO_STATES, (AgentSpec(1.0, 0.0, ([0.3], [0.5, 0.0])),))
    with pytest.raises(ValueError):
        vanishing_endowment_family(e, [[1.0], [0.0, -1.0]])
