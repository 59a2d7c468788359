"""Acceptance criteria, one test each; every test prints a single verdict line."""

import filecmp
import math
import time

import numpy as np

from cara_nonneg.bonds import (IncrementLaw, RandomWalkEconomy, bond_price, bond_price_mc,
                               hetero_gamma_limit, yield_bounds, yield_curve)
from cara_nonneg.cli import bundled_configs, run
from cara_nonneg.complete import AgentSpec, constrained_consumption, random_agent
from cara_nonneg.equilibrium import (EconomySpec, _xy_residuals, nonuniqueness_scan,
                                     solve_equilibrium, two_root_construction,
                                     vanishing_endowment_family)
from cara_nonneg.incomplete import one_period_closed_form, solve_kkt, verify_kkt
from cara_nonneg.market import random_incomplete_market, random_spd, random_type_c_market
from cara_nonneg.oracle import oracle_complete, oracle_incomplete
from cara_nonneg.probtree import build_tree, random_tree
from cara_nonneg.savings import (SavingsInstance, monotonicity_report, random_instance,
                                 solve_c0_curve)

from conftest import record

CONSUMPTION_TOL = 1e-7      # closed form vs oracle, sup-norm
KKT_TOL = 1e-8              # KKT residuals and utility gaps
CLOSED_FORM_TOL = 1e-8      # one-period closed form vs active-set solver
EQ_TOL = 1e-8               # clearing and budgets
IDENTITY_TOL = 1e-10        # clearing identity of the demands, autarky
SCAN_TOL = 1e-9             # residual of scanned equilibria
FAMILY_TOL = 1e-10          # vanishing-endowment equilibria
LIMIT_GAP = 0.01            # |Y(0, 200) - limit|
MC_Z = 3.0                  # Monte-Carlo agreement in standard errors
MC_PATHS = 1_000_000
BAND = 0.005                # slack around the yield bounds
MONO_TOL = 1e-9             # upward violation of c_0


def _sup(a, b):
    return max(float(np.abs(np.asarray(x) - np.asarray(y)).max()) for x, y in zip(a, b))


def test_criterion_01_closed_form_vs_oracle():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, binding = 0.0, 0
    for _ in range(50):
        tree = random_tree(rng, int(rng.integers(0, 4)), max_leaves=27)
        agent, xi = random_agent(rng, tree), random_spd(rng, tree)
        c = constrained_consumption(tree, agent, xi).consumption
        o = oracle_complete(tree, agent, xi).consumption
        worst = max(worst, _sup(c, o))
        binding += sum(int((x == 0).sum()) for x in c)
    elapsed = time.perf_counter() - t0
    ok = worst <= CONSUMPTION_TOL and elapsed < 10.0
    record(1, "closed form vs oracle", ok,
           f"50 trees, max gap {worst:.2e} (tol {CONSUMPTION_TOL:g}), "
           f"{binding} binding nodes, {elapsed:.2f}s (limit 10s)")
    assert ok


def test_criterion_02_kkt_certification():
    rng = np.random.default_rng(202)
    worst_kkt, worst_u = 0.0, 0.0
    for i in range(20):
        tree = random_tree(rng, int(rng.integers(1, 4)))
        m = random_incomplete_market(rng, tree) if i % 2 else random_type_c_market(rng, tree)
        agent = random_agent(rng, tree)
        sol = solve_kkt(agent, m)
        rep = verify_kkt(sol, agent, m, tol=KKT_TOL)
        worst_kkt = max(worst_kkt, max(v for k, v in rep.as_dict().items() if k != "tol"))
        worst_u = max(worst_u, abs(oracle_incomplete(agent, m).value - sol.utility))
    ok = worst_kkt <= KKT_TOL and worst_u <= KKT_TOL
    record(2, "KKT certification", ok,
           f"20 instances, max residual {worst_kkt:.2e}, utility gap {worst_u:.2e} (tol {KKT_TOL:g})")
    assert ok


def test_criterion_03_one_period_closed_form():
    rng = np.random.default_rng(303)
    worst, essinf_cases = 0.0, 0
    for _ in range(20):
        tree = build_tree([int(rng.integers(3, 7))])
        m = random_type_c_market(rng, tree)
        agent = random_agent(rng, tree, zero_frac=0.5)
        cf = one_period_closed_form(agent, m)
        s = solve_kkt(agent, m)
        worst = max(worst, abs(cf.c0 - s.consumption[0][0]),
                    float(np.abs(cf.c1 - s.consumption[1]).max()))
        essinf_cases += int(not np.all(cf.interior))
    ok = worst <= CLOSED_FORM_TOL and essinf_cases > 0
    record(3, "one-period closed form", ok,
           f"20 instances, max gap {worst:.2e} (tol {CLOSED_FORM_TOL:g}), "
           f"essinf branch active in {essinf_cases}")
    assert ok


def test_criterion_04_equilibrium_certification():
    rng = np.random.default_rng(404)
    w_clear = w_budget = w_ident = 0.0
    n_sol = 0
    for _ in range(6):
        tree = random_tree(rng, 2, max_branch=2)
        n = int(rng.integers(2, 4))
        agents = tuple(AgentSpec(float(rng.uniform(0.5, 3)), float(rng.uniform(0, 0.2)),
                                 tuple(rng.uniform(0.05, 1.5, s) for s in tree.sizes))
                       for _ in range(n))
        for s in solve_equilibrium(EconomySpec(tree, agents)):
            n_sol += 1
            w_clear = max(w_clear, s.residuals["clearing"])
            w_budget = max(w_budget, float(np.max(np.abs(s.residuals["budget"]))))
            w_ident = max(w_ident, s.residuals["identity"])
    tree = build_tree([2, 2], [[0.3, 0.7], [0.5, 0.5, 0.4, 0.6]])
    end = ([1.0], [0.5, 2.0], [0.3, 1.0, 1.5, 0.7])
    homo = solve_equilibrium(EconomySpec(tree, tuple(AgentSpec(1.5, 0.05, end) for _ in range(3))))
    autarky = max(_sup(c, end) for s in homo for c in s.consumptions)
    ok = (w_clear <= EQ_TOL and w_budget <= EQ_TOL and w_ident <= IDENTITY_TOL
          and autarky <= IDENTITY_TOL)
    record(4, "equilibrium certification", ok,
           f"{n_sol} equilibria, clearing {w_clear:.1e}, budget {w_budget:.1e}, "
           f"identity {w_ident:.1e}; homogeneous autarky gap {autarky:.1e}")
    assert ok


def test_criterion_05_two_equilibria():
    c = two_root_construction(eps11=0.3, eps21=0.3)
    hyp = all(c["hypotheses"].values())
    roots = nonuniqueness_scan(c["economy"], tol=SCAN_TOL)
    res = max([float(np.abs(_xy_residuals(math.log(x), math.log(y), c["economy"])).max())
               for x, y in roots], default=math.inf)
    true_gap = max(abs(r[1]) for r in c["budget_residuals"])
    ok = hyp and len(roots) >= 2 and res <= SCAN_TOL
    record(5, "two equilibria", ok,
           f"hypotheses hold: {hyp}; scan found {len(roots)} equilibrium "
           f"(residual {res:.1e}); the constructed pairs miss agent 2's budget by {true_gap:.2f}")
    assert ok


def test_criterion_06_infinitely_many_equilibria():
    tree = build_tree([2], [[0.4, 0.6]])
    rng = np.random.default_rng(606)
    eps1 = np.array([0.5, 1.2])
    econ_i = EconomySpec(tree, (AgentSpec(1.0, 0.0, ([0.0], eps1)),))
    worst_i = 0.0
    ok_i = True
    for lam in 1.0 + rng.exponential(2.0, 10):
        s = vanishing_endowment_family(econ_i, [[1.0], [9.0, 9.0]], weights=[lam])
        ok_i &= s.admissible and np.allclose(s.spd[1], np.exp(-eps1) / lam, rtol=1e-12)
        worst_i = max(worst_i, s.max_residual())
    eps0 = 0.3
    econ_ii = EconomySpec(tree, (AgentSpec(1.0, 0.0, ([eps0], [0.5, 0.0])),))
    worst_ii = 0.0
    ok_ii = True
    for y in math.exp(eps0) * (1.0 + rng.exponential(2.0, 10)):
        s = vanishing_endowment_family(econ_ii, [[1.0], [0.0, y]])
        ok_ii &= s.admissible and np.isclose(s.spd[1][1], y)
        worst_ii = max(worst_ii, s.max_residual())
    ok = bool(ok_i and ok_ii and worst_i <= FAMILY_TOL and worst_ii <= FAMILY_TOL)
    record(6, "infinitely many equilibria", ok,
           f"case (i) 10 weights >= 1, max residual {worst_i:.1e}; "
           f"case (ii) 10 levels above e^eps0, max residual {worst_ii:.1e} (tol {FAMILY_TOL:g})")
    assert ok


def test_criterion_07_yield_limit():
    law = IncrementLaw((0.0, 2.0), (0.5, 0.5))
    econ = RandomWalkEconomy((1.0, 2.0), (0.05, 0.05), law)
    Y = yield_curve(econ, None, 400)
    lim = hetero_gamma_limit((1.0, 2.0), 0.05, law)
    assert math.isclose(lim, 0.05 - math.log(0.5 * (1 + math.exp(-2 / 1.5))), rel_tol=1e-14)
    g200, g400 = abs(Y[199] - lim), abs(Y[399] - lim)
    zs = []
    for t in (50, 100):
        est, se = bond_price_mc(econ, None, t, MC_PATHS, seed=t)
        zs.append(abs(est - bond_price(econ, None, t)) / se)
    ok = g200 < LIMIT_GAP and g400 < g200 and max(zs) <= MC_Z
    record(7, "yield limit", ok,
           f"gap {g200:.2e} at t=200, {g400:.2e} at t=400 (tol {LIMIT_GAP:g}); "
           f"Monte-Carlo |z| {zs[0]:.2f}, {zs[1]:.2f} at t=50, 100 (limit {MC_Z:g})")
    assert ok


def test_criterion_08_yield_bounds():
    law = IncrementLaw((0.0, 1.0), (0.5, 0.5))
    b = yield_bounds(1.0, (0.2, 0.1), law)
    Y = yield_curve(RandomWalkEconomy((1.0, 1.0), (0.2, 0.1), law), None, 400)[199:]
    ok = bool(np.all(Y >= b.lower - BAND) and np.all(Y <= b.upper + BAND))
    record(8, "yield bounds", ok,
           f"Y(0,t) for t in [200,400] spans [{Y.min():.4f}, {Y.max():.4f}] "
           f"within [{b.lower:.4f}, {b.upper:.4f}] +- {BAND:g}")
    assert ok


def test_criterion_09_precautionary_savings():
    worst, var_ok, n_pts, deriv = 0.0, True, 0, -math.inf
    for seed in range(10):
        inst = random_instance(np.random.default_rng(900 + seed))
        curve = solve_c0_curve(inst, check=False)
        rep = monotonicity_report(curve, tol=MONO_TOL)
        worst = max(worst, rep.max_violation)
        var_ok &= rep.variance_monotone
        deriv = max(deriv, rep.max_derivative)
        n_pts += len(curve)
    flats = []
    base = random_instance(np.random.default_rng(999))
    zero_x = SavingsInstance(base.tree, base.labels, base.M1, base.gamma, base.rho, base.eps0,
                             np.zeros(4))
    for inst in (zero_x, random_instance(np.random.default_rng(998), measurable_x=True)):
        flats.append(float(np.ptp([p.c0 for p in solve_c0_curve(inst, check=False)])))
    ok = worst <= MONO_TOL and var_ok and max(flats) <= MONO_TOL and n_pts == 210
    record(9, "precautionary savings", ok,
           f"10 instances x 21 points, max rise of c0 {worst:.1e} (tol {MONO_TOL:g}), "
           f"max dc0/de {deriv:.1e}, variance monotone {var_ok}, "
           f"degenerate spreads {flats[0]:.1e}, {flats[1]:.1e}")
    assert ok


COMMAND_OF = {"trivial_complete": "optimize-complete", "complete_two_period": "optimize-complete",
              "incomplete_type_c": "optimize-incomplete",
              "equilibrium_three_agents": "equilibrium", "nonuniqueness": "equilibria-scan",
              "bonds_hetero_gamma": "bond-yields", "bonds_hetero_rho": "bond-yields",
              "precautionary": "precautionary", "oracle_check": "oracle-check"}


def test_criterion_10_determinism(tmp_path, capsys):
    names = sorted(bundled_configs())
    differ = []
    for name in names:
        cmd = COMMAND_OF[name]
        for d in ("a", "b"):
            run([cmd, name, "--out-dir", str(tmp_path / d / name)])
        cmp = filecmp.dircmp(tmp_path / "a" / name, tmp_path / "b" / name)
        _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / name, tmp_path / "b" / name,
                                               cmp.common_files, shallow=False)
        if mismatch or errors or cmp.left_only or cmp.right_only:
            differ.append(name)
    capsys.readouterr()
    ok = not differ and len(names) == len(COMMAND_OF)
    record(10, "determinism", ok,
           f"{len(names)} bundled configs run twice, differing outputs: {differ or 'none'}")
    assert ok
