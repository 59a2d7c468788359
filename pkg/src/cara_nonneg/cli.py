"""Command-line experiment runner.

Every subcommand reads one JSON config, validates it against a schema that
rejects unknown keys, writes ``<command>.json`` (full results) and
``<command>.csv`` (summary rows) into ``--out-dir`` and prints a residual
table.  Exit status: 0 when every declared tolerance holds, 1 when the run
completed but some tolerance failed, 2 for an invalid config, 3 when a
solver failed (``<command>.diagnostics.json`` is written).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import bonds, equilibrium, incomplete, oracle, savings
from .complete import AgentSpec, constrained_consumption, random_agent, solve_unconstrained
from .errors import ConvergenceError
from .market import market_from_dict, random_incomplete_market, random_type_c_market
from .probtree import random_tree, tree_from_dict

EXIT_OK, EXIT_TOL, EXIT_SCHEMA, EXIT_SOLVER = 0, 1, 2, 3

# -- schemas ------------------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_VEC = {"type": "array", "items": _NUM}
_NESTED = {"type": "array", "items": {"anyOf": [_NUM, _VEC]}}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


TREE = _obj({"branching": {"type": "array", "items": {"anyOf": [
                {"type": "integer", "minimum": 1},
                {"type": "array", "items": {"type": "integer", "minimum": 1}}]}},
             "probs": {"type": "array", "items": _VEC}}, ["branching"])
AGENT = _obj({"gamma": _POS, "rho": _NONNEG, "endowment": _NESTED},
             ["gamma", "rho", "endowment"])
MARKET = _obj({
    "assets": {"type": "array", "items": _NESTED},
    "periods": {"type": "array", "items": _obj({"payoff": {"type": "array"},
                                                "price": {"type": "array"}},
                                               ["payoff", "price"])},
    "rate": _NESTED,
    "wealth_spaces": {"type": "array"},
    "type_c": _obj({"partitions": {"type": "array"}, "spd": _NESTED}, ["partitions", "spd"]),
    "spd": _NESTED,
})
COMMON = {"description": {"type": "string"}, "tol": _POS,
          "seed": {"type": "integer", "minimum": 0}}

SCHEMAS = {
    "optimize-complete": _obj({**COMMON, "tree": TREE, "spd": _NESTED, "agent": AGENT,
                               "constrained": {"type": "boolean"},
                               "oracle": {"type": "boolean"}},
                              ["tree", "spd", "agent"]),
    "optimize-incomplete": _obj({**COMMON, "tree": TREE, "market": MARKET, "agent": AGENT,
                                 "starts": {"type": "integer", "minimum": 1},
                                 "oracle": {"type": "boolean"}},
                                ["tree", "market", "agent"]),
    "equilibrium": _obj({**COMMON, "tree": TREE,
                         "agents": {"type": "array", "items": AGENT, "minItems": 1},
                         "starts": {"type": "array", "items": _VEC},
                         "n_grid": {"type": "integer", "minimum": 1}},
                        ["tree", "agents"]),
    "equilibria-scan": _obj({
        **COMMON,
        "construction": _obj({"eps11": _NONNEG, "eps21": _NONNEG, "gap": _POS,
                              "eps10": _NONNEG}),
        "economy": _obj({"eps0": _VEC, "eps1": _VEC, "gammas": _VEC, "rhos": _VEC},
                        ["eps0", "eps1"]),
        "grid": _obj({"n": {"type": "integer", "minimum": 3},
                      "span": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}}),
        "min_equilibria": {"type": "integer", "minimum": 1},
    }),
    "bond-yields": _obj({
        **COMMON,
        "gammas": _VEC, "rhos": _VEC, "weights": _VEC,
        "increment": _obj({"support": _VEC, "probs": _VEC}, ["support", "probs"]),
        "t_max": {"type": "integer", "minimum": 1},
        "check": _obj({"limit_gap": _POS, "band": _NONNEG,
                       "t_from": {"type": "integer", "minimum": 1}}),
        "monte_carlo": _obj({"maturities": {"type": "array",
                                            "items": {"type": "integer", "minimum": 1}},
                             "paths": {"type": "integer", "minimum": 2},
                             "z": _POS}),
    }, ["gammas", "rhos", "increment", "t_max"]),
    "precautionary": _obj({
        **COMMON,
        "instance": _obj({"tree": TREE, "labels": {"type": "array"}, "M1": _VEC,
                          "gamma": _POS, "rho": _NONNEG, "eps0": _NONNEG, "X": _VEC},
                         ["tree", "labels", "M1", "gamma", "rho", "eps0", "X"]),
        "random": _obj({"n_states": {"type": "integer", "minimum": 4}, "gamma": _POS,
                        "rho": _NONNEG, "eps0": _NONNEG, "measurable_x": {"type": "boolean"}}),
        "eps_grid": _VEC,
    }),
    "oracle-check": _obj({
        **COMMON,
        "complete": _obj({"n": {"type": "integer", "minimum": 0},
                          "horizon_max": {"type": "integer", "minimum": 0},
                          "max_leaves": {"type": "integer", "minimum": 1}}),
        "incomplete": _obj({"n": {"type": "integer", "minimum": 0},
                            "horizon_max": {"type": "integer", "minimum": 1}}),
    }),
}

DEFAULT_TOL = {"optimize-complete": 1e-8, "optimize-incomplete": 1e-8, "equilibrium": 1e-8,
               "equilibria-scan": 1e-9, "bond-yields": 1e-10, "precautionary": 1e-9,
               "oracle-check": 1e-7}


class ConfigError(ValueError):
    pass


# -- output helpers -------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Run:
    """Collects results, CSV rows and residual checks for one command."""

    def __init__(self, command: str, tol: float):
        self.command, self.tol = command, tol
        self.result: dict = {}
        self.header: list[str] = []
        self.rows: list[list] = []
        self.checks: list[tuple[str, float, float, bool]] = []

    def check(self, name: str, value: float, tol: float | None = None, ok: bool | None = None):
        tol = self.tol if tol is None else tol
        value = float(value)
        if ok is None:
            ok = value <= tol
        self.checks.append((name, value, tol, bool(ok)))

    @property
    def passed(self) -> bool:
        return all(c[3] for c in self.checks)

    def write(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        body = {"command": self.command, "tol": self.tol, "passed": self.passed,
                "checks": [{"name": n, "value": v, "tol": t, "ok": ok}
                           for n, v, t, ok in self.checks],
                "result": self.result}
        text = json.dumps(_jsonable(body), sort_keys=True, indent=2, allow_nan=False)
        (out_dir / f"{self.command}.json").write_text(text + "\n")
        with open(out_dir / f"{self.command}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header)
            w.writerows([[_fmt(v) for v in r] for r in self.rows])

    def table(self) -> str:
        width = max([len(c[0]) for c in self.checks] + [8])
        lines = [f"{'residual':<{width}}  {'value':>12}  {'tol':>9}  status"]
        for n, v, t, ok in self.checks:
            lines.append(f"{n:<{width}}  {v:>12.3e}  {t:>9.1e}  {'ok' if ok else 'FAIL'}")
        return "\n".join(lines)


def _agent(d) -> AgentSpec:
    return AgentSpec(d["gamma"], d["rho"], tuple(np.atleast_1d(e) for e in d["endowment"]))


def _node_rows(tree, *cols):
    for k in range(tree.horizon + 1):
        for n in range(tree.sizes[k]):
            yield [k, n] + [c[k][n] for c in cols]


# -- commands -----------------------------------------------------------------------

def cmd_optimize_complete(cfg, run: Run, args):
    tree = tree_from_dict(cfg["tree"])
    agent = _agent(cfg["agent"])
    xi = tree.process(cfg["spd"])
    constrained = cfg.get("constrained", True)
    sol = (constrained_consumption if constrained else solve_unconstrained)(tree, agent, xi)
    eps = agent.on(tree)
    run.result = {"consumption": sol.consumption, "multiplier": sol.multiplier,
                  "utility": sol.utility, "constrained": constrained}
    run.header = ["level", "node", "endowment", "consumption"]
    run.rows = list(_node_rows(tree, eps, sol.consumption))
    scale = max(1.0, max(float(np.abs(x).max()) for x in eps))
    run.check("budget", sol.budget_residual / scale)
    if constrained:
        run.check("negativity", max(float(np.maximum(-c, 0).max()) for c in sol.consumption))
    if cfg.get("oracle", False):
        o = oracle.oracle_complete(tree, agent, xi, allow_negative=not constrained, seed=args.seed)
        gap = max(float(np.abs(a - b).max()) for a, b in zip(o.consumption, sol.consumption))
        run.result["oracle"] = {"value": o.value, "gap": gap, "method": o.method}
        run.check("oracle_gap", gap, max(run.tol, 1e-7))


def cmd_optimize_incomplete(cfg, run: Run, args):
    tree = tree_from_dict(cfg["tree"])
    m = market_from_dict(tree, cfg["market"])
    agent = _agent(cfg["agent"])
    starts = args.starts or cfg.get("starts", 5)
    sol = incomplete.solve_kkt(agent, m, starts=starts, seed=args.seed)
    rep = incomplete.verify_kkt(sol, agent, m, tol=run.tol)
    run.result = {"consumption": sol.consumption, "multipliers": sol.multipliers,
                  "strategy": {"pi": sol.strategy.pi, "phi": sol.strategy.phi},
                  "utility": sol.utility, "multipliers_unique": sol.multipliers_unique,
                  "kkt": rep.as_dict()}
    run.header = ["level", "node", "endowment", "consumption", "multiplier"]
    run.rows = list(_node_rows(tree, agent.on(tree), sol.consumption, sol.multipliers))
    for name, v in rep.as_dict().items():
        if name != "tol":
            run.check(f"kkt_{name}", v)
    if tree.horizon == 1 and m.is_type_c:
        cf = incomplete.one_period_closed_form(agent, m)
        gap = max(abs(cf.c0 - sol.consumption[0][0]), float(np.abs(cf.c1 - sol.consumption[1]).max()))
        run.result["one_period_closed_form"] = cf._asdict()
        run.check("closed_form_gap", gap)
    if cfg.get("oracle", False):
        o = oracle.oracle_incomplete(agent, m)
        run.result["oracle"] = {"value": o.value, "method": o.method}
        run.check("oracle_utility_gap", abs(o.value - sol.utility))


def cmd_equilibrium(cfg, run: Run, args):
    tree = tree_from_dict(cfg["tree"])
    econ = equilibrium.EconomySpec(tree, tuple(_agent(a) for a in cfg["agents"]))
    n_grid = args.starts or cfg.get("n_grid", 9)
    sols = equilibrium.solve_equilibrium(econ, starts=cfg.get("starts"), n_grid=n_grid,
                                         tol=run.tol)
    run.result = {"n_equilibria": len(sols), "solutions": [
        {"weights": s.weights, "spd": s.spd, "consumptions": s.consumptions,
         "residuals": s.residuals} for s in sols]}
    N = econ.n_agents
    run.header = ["solution", "level", "node", "aggregate", "spd"] + [f"c{i + 1}" for i in range(N)]
    for j, s in enumerate(sols):
        for row in _node_rows(tree, econ.aggregate, s.spd, *s.consumptions):
            run.rows.append([j] + row)
    for key in ("budget", "clearing", "demand_gap", "spd"):
        run.check(key, max(float(np.max(np.abs(s.residuals[key]))) for s in sols))
    run.check("identity", max(float(np.max(np.abs(s.residuals["identity"]))) for s in sols),
              min(run.tol, 1e-10))


def cmd_equilibria_scan(cfg, run: Run, args):
    grid = cfg.get("grid", {})
    if "economy" in cfg:
        e = cfg["economy"]
        econ = equilibrium.two_agent_economy(e["eps0"], e["eps1"], e.get("gammas", (1.0, 1.0)),
                                             e.get("rhos", (0.0, 0.0)))
        construction = None
    else:
        c = cfg.get("construction", {})
        construction = equilibrium.two_root_construction(**c)
        econ = construction.pop("economy")
    roots = equilibrium.nonuniqueness_scan(econ, n=grid.get("n", 241),
                                           span=tuple(grid.get("span", (-10.0, 5.0))),
                                           tol=run.tol)
    res = [equilibrium._xy_residuals(np.log(x), np.log(y), econ) for x, y in roots]
    run.result = {"eps0": [float(a[0][0]) for a in econ.endowments],
                  "eps1": [float(a[1][0]) for a in econ.endowments],
                  "equilibria": [{"x": x, "y": y, "budget_residuals": r}
                                 for (x, y), r in zip(roots, res)]}
    run.header = ["kind", "x", "y", "residual_agent1", "residual_agent2"]
    run.rows = [["equilibrium", x, y, r[0], r[1]] for (x, y), r in zip(roots, res)]
    if construction is not None:
        run.result["construction"] = construction
        for (x, y), r in zip(construction["roots"], construction["budget_residuals"]):
            run.rows.append(["construction_root", x, y, r[0], r[1]])
        hyp = construction["hypotheses"]
        run.check("hypotheses_violated", float(not all(hyp.values())), 0.0)
    run.check("max_equilibrium_residual",
              max([float(np.abs(r).max()) for r in res], default=0.0))
    need = cfg.get("min_equilibria", 1)
    run.check("equilibria_found", len(roots), need, ok=len(roots) >= need)


def cmd_bond_yields(cfg, run: Run, args):
    law = bonds.IncrementLaw(tuple(cfg["increment"]["support"]), tuple(cfg["increment"]["probs"]))
    econ = bonds.RandomWalkEconomy(tuple(cfg["gammas"]), tuple(cfg["rhos"]), law)
    w = cfg.get("weights")
    T = cfg["t_max"]
    Y = bonds.yield_curve(econ, w, T)
    g, r = np.array(econ.gammas), np.array(econ.rhos)
    chk = cfg.get("check", {})
    t_from = chk.get("t_from", 1)
    run.result = {"yields": Y, "t_prime": bonds.ordering_threshold(
        w if w is not None else np.ones(econ.n_agents), r)}
    cols = ["t", "yield"]
    extra = []
    if np.all(r == r[0]):
        lim = bonds.hetero_gamma_limit(g, r[0], law)
        run.result["limit"] = lim
        gap = np.abs(Y - lim)
        cols.append("gap_to_limit")
        extra.append(gap)
        run.check("final_gap_to_limit", gap[-1], chk.get("limit_gap", 0.01))
        if T >= 2 * t_from and t_from > 1:
            d = gap[-1] - gap[t_from - 1]
            run.check("gap_shrinks", d, 0.0, ok=d < 0)
    if np.all(g == g[0]) and econ.n_agents > 1 and np.all(np.diff(r) <= 0):
        b = bonds.yield_bounds(float(g[0]), r, law)
        run.result["bounds"] = {"lower": b.lower, "upper": b.upper, "a": b.a, "b": b.b,
                                "intervals": b.intervals}
        band = chk.get("band", 0.005)
        tail = Y[t_from - 1:]
        viol = max(0.0, float(np.max(b.lower - band - tail)), float(np.max(tail - b.upper - band)))
        cols += ["lower", "upper"]
        extra += [np.full(T, b.lower), np.full(T, b.upper)]
        run.check("band_violation", viol, 0.0)
    run.header = cols
    run.rows = [[t + 1, Y[t]] + [e[t] for e in extra] for t in range(T)]
    mc = cfg.get("monte_carlo")
    if mc:
        z = mc.get("z", 3.0)
        out = []
        for t in mc.get("maturities", []):
            est, se = bonds.bond_price_mc(econ, w, t, mc.get("paths", 1_000_000), seed=args.seed)
            exact = bonds.bond_price(econ, w, t)
            score = abs(est - exact) / se if se > 0 else (0.0 if est == exact else math.inf)
            out.append({"t": t, "estimate": est, "std_error": se, "exact": exact, "z": score})
            run.check(f"mc_z_t{t}", score, z)
        run.result["monte_carlo"] = out


def cmd_precautionary(cfg, run: Run, args):
    if "instance" in cfg:
        d = cfg["instance"]
        inst = savings.SavingsInstance(tree_from_dict(d["tree"]), d["labels"], d["M1"],
                                       d["gamma"], d["rho"], d["eps0"], d["X"])
    else:
        inst = savings.random_instance(np.random.default_rng(args.seed), **cfg.get("random", {}))
    if "eps_grid" in cfg:
        inst.eps_grid = tuple(cfg["eps_grid"])
    curve = savings.solve_c0_curve(inst)
    run.result = {"instance": inst.to_dict(), "curve": [
        {"eps": p.eps, "c0": p.c0, "c1": p.c1, "lambda": p.lam, "in_regime": p.in_regime,
         "derivative": p.derivative, "kkt_gap": p.kkt_gap, "variance": p.variance}
        for p in curve], "eps0_threshold": savings.eps0_threshold(inst)}
    run.header = ["eps", "c0", "var_mean", "var_max", "in_regime", "kkt_gap"]
    for p in curve:
        run.rows.append([p.eps, p.c0, inst.tree.expect(p.variance, 1), float(p.variance.max()),
                         p.in_regime, p.kkt_gap])
    run.check("budget", max(p.budget_residual for p in curve), 1e-10)
    run.check("kkt_gap", max(p.kkt_gap for p in curve), 1e-7)
    run.check("out_of_regime_points", sum(not p.in_regime for p in curve), 0)
    if all(p.in_regime for p in curve):
        rep = savings.monotonicity_report(curve, tol=run.tol)
        run.result["monotonicity"] = rep.as_dict()
        run.check("c0_increase", rep.max_violation)
        run.check("variance_not_monotone", float(not rep.variance_monotone), 0.0)


def cmd_oracle_check(cfg, run: Run, args):
    rng = np.random.default_rng(args.seed)
    c = cfg.get("complete", {})
    rows, worst_c = [], 0.0
    for i in range(c.get("n", 50)):
        tree = random_tree(rng, int(rng.integers(0, c.get("horizon_max", 3) + 1)),
                           max_leaves=c.get("max_leaves", 27))
        xi = [np.ones(1)] + [np.exp(rng.normal(0, 0.7, n)) for n in tree.sizes[1:]]
        agent = random_agent(rng, tree)
        sol = constrained_consumption(tree, agent, xi)
        o = oracle.oracle_complete(tree, agent, xi, seed=args.seed)
        gap = max(float(np.abs(a - b).max()) for a, b in zip(sol.consumption, o.consumption))
        binding = int(sum((x == 0).sum() for x in sol.consumption))
        worst_c = max(worst_c, gap)
        rows.append(["complete", i, tree.n_nodes, binding, gap, o.value - sol.utility])
    inc = cfg.get("incomplete", {})
    worst_u, worst_k = 0.0, 0.0
    for i in range(inc.get("n", 20)):
        tree = random_tree(rng, int(rng.integers(1, inc.get("horizon_max", 3) + 1)))
        m = random_incomplete_market(rng, tree) if i % 2 else random_type_c_market(rng, tree)
        agent = random_agent(rng, tree)
        sol = incomplete.solve_kkt(agent, m, seed=args.seed)
        rep = incomplete.verify_kkt(sol, agent, m)
        o = oracle.oracle_incomplete(agent, m)
        gap = max(float(np.abs(a - b).max()) for a, b in zip(sol.consumption, o.consumption))
        worst_u = max(worst_u, abs(o.value - sol.utility))
        worst_k = max(worst_k, max(v for k, v in rep.as_dict().items() if k != "tol"))
        binding = int(sum((x == 0).sum() for x in sol.consumption))
        rows.append(["incomplete", i, tree.n_nodes, binding, gap, o.value - sol.utility])
    run.header = ["kind", "instance", "nodes", "binding_nodes", "consumption_gap", "utility_gap"]
    run.rows = rows
    run.result = {"rows": rows}
    run.check("complete_consumption_gap", worst_c)
    run.check("incomplete_utility_gap", worst_u, 1e-8)
    run.check("incomplete_kkt_residual", worst_k, 1e-8)


COMMANDS = {
    "optimize-complete": cmd_optimize_complete,
    "optimize-incomplete": cmd_optimize_incomplete,
    "equilibrium": cmd_equilibrium,
    "equilibria-scan": cmd_equilibria_scan,
    "bond-yields": cmd_bond_yields,
    "precautionary": cmd_precautionary,
    "oracle-check": cmd_oracle_check,
}


# -- entry point ----------------------------------------------------------------------

def bundled_configs() -> dict[str, Path]:
    """Bundled example configs keyed by file stem."""
    root = resources.files("cara_nonneg") / "configs"
    return {p.name[:-5]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}


def load_config(command: str, path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from None
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cara-nonneg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="JSON config file, or the name of a bundled config")
        s.add_argument("--tol", type=float, default=None, help="override the config tolerance")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--starts", type=int, default=None,
                       help="multi-start count (incomplete) or weight grid size (equilibrium)")
        s.add_argument("--out-dir", type=Path, default=Path("out"))
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    path = Path(args.config)
    if not path.exists():
        path = bundled_configs().get(args.config, path)
    try:
        cfg = load_config(args.command, path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    if args.seed is None:
        args.seed = cfg.get("seed", 0)
    tol = args.tol if args.tol is not None else cfg.get("tol", DEFAULT_TOL[args.command])
    r = Run(args.command, tol)
    try:
        COMMANDS[args.command](cfg, r, args)
    except (ConvergenceError, RuntimeError, ArithmeticError, MemoryError,
            np.linalg.LinAlgError) as exc:
        diag = {"command": args.command, "error": f"{type(exc).__name__}: {exc}",
                "diagnostics": getattr(exc, "diagnostics", {})}
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / f"{args.command}.diagnostics.json").write_text(
            json.dumps(_jsonable(diag), sort_keys=True, indent=2) + "\n")
        print(f"solver failure: {diag['error']}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    r.write(args.out_dir)
    print(r.table())
    return EXIT_OK if r.passed else EXIT_TOL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
