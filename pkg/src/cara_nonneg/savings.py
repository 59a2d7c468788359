"""Precautionary savings in a one-period market of type C.

Time-1 income is ``eps_1(e) = exp(e X) / E[exp(e X) | H_1]``: a mean-one
(given ``H_1``) random variable whose un-insurable spread grows with the
parameter ``e in [0, 1]``.  The experiment tracks how present consumption
``c_0`` reacts to that spread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .complete import AgentSpec
from .incomplete import one_period_closed_form, solve_kkt
from .market import MarketSpec, type_c_market
from .probtree import Tree, block_labels, build_tree, cond_expect

DEFAULT_GRID = tuple(np.round(np.linspace(0.0, 1.0, 21), 10))
MONO_TOL = 1e-9
KKT_TOL = 1e-7


@dataclass(eq=False)
class SavingsInstance:
    """One-period type-C market, agent parameters and the income shape ``X``.

    ``labels`` partitions the time-1 states into the blocks of ``H_1``;
    ``M1`` is the time-1 aggregate state price density and must be constant
    on every block.
    """

    tree: Tree
    labels: np.ndarray
    M1: np.ndarray
    gamma: float
    rho: float
    eps0: float
    X: np.ndarray
    eps_grid: tuple = DEFAULT_GRID

    def __post_init__(self):
        if self.tree.horizon != 1:
            raise ValueError("savings experiment needs a one-period tree")
        n = self.tree.sizes[1]
        self.labels = block_labels(self.labels, n)
        self.M1 = np.asarray(self.M1, dtype=float).reshape(n)
        self.X = np.asarray(self.X, dtype=float).reshape(n)
        if np.any(self.X < 0):
            raise ValueError("X must be non-negative")
        if np.any(self.M1 <= 0):
            raise ValueError("M1 must be strictly positive")
        grid = np.asarray(self.eps_grid, dtype=float)
        if np.any(grid < 0) or np.any(grid > 1):
            raise ValueError("eps grid must lie in [0, 1]")
        self.eps_grid = tuple(grid)
        self._market = type_c_market(self.tree, [self.labels], [np.ones(1), self.M1])

    @property
    def market(self) -> MarketSpec:
        return self._market

    def agent(self, e: float) -> AgentSpec:
        return AgentSpec(self.gamma, self.rho, (np.array([self.eps0]), self.endowment(e)))

    def endowment(self, e: float) -> np.ndarray:
        return endowment_eps(self.tree, self.X, e, self.labels)

    def to_dict(self) -> dict:
        return {"tree": self.tree.to_dict(), "labels": self.labels.tolist(),
                "M1": self.M1.tolist(), "gamma": self.gamma, "rho": self.rho,
                "eps0": self.eps0, "X": self.X.tolist(), "eps_grid": list(self.eps_grid)}


def _tilted(tree, X, e, labels):
    # exp(e X) scaled by its block maximum, so large e X cannot overflow
    lab = block_labels(labels, tree.sizes[1])
    z = e * np.asarray(X, dtype=float)
    top = np.full(lab.max() + 1, -np.inf)
    np.maximum.at(top, lab, z)
    return np.exp(z - top[lab]), lab


def endowment_eps(tree: Tree, X, e: float, labels) -> np.ndarray:
    """``exp(e X) / E[exp(e X) | H_1]``, which has conditional mean one."""
    if not 0.0 <= e <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    w, lab = _tilted(tree, X, e, labels)
    return w / cond_expect(tree, w, 1, lab)


def cond_variance(tree: Tree, X, e: float, labels) -> np.ndarray:
    """``Var[eps_1(e) | H_1] = E[e^{2eX}|H_1] / E[e^{eX}|H_1]^2 - 1`` per node."""
    w, lab = _tilted(tree, X, e, labels)
    v = cond_expect(tree, w * w, 1, lab) / cond_expect(tree, w, 1, lab) ** 2 - 1.0
    return np.maximum(v, 0.0)


@dataclass
class CurvePoint:
    eps: float
    c0: float
    c1: np.ndarray
    lam: float
    in_regime: bool
    budget_residual: float
    derivative: float
    kkt_gap: float = float("nan")
    variance: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _interior_point(inst: SavingsInstance, e: float):
    tree, g, rho = inst.tree, inst.gamma, inst.rho
    lab, M1 = inst.labels, inst.M1
    eps1 = inst.endowment(e)
    ce = cond_expect(tree, np.exp(-g * eps1), 1, lab)
    L = np.log(ce)
    EM = tree.expect(M1, 1)
    # the budget is linear in c0 once lambda = exp(rho - gamma c0) is substituted
    K = rho / g * EM + inst.eps0 + tree.expect(M1 * np.log(M1), 1) / g
    c0 = (K - tree.expect(M1 * L, 1) / g) / (1.0 + EM)
    c1 = eps1 + (L - np.log(M1)) / g + c0 - rho / g
    lam = float(np.exp(rho - g * c0))
    resid = abs(c0 + tree.expect(M1 * c1, 1) - inst.eps0 - tree.expect(M1 * eps1, 1))
    # derivative of c0 in e, through d eps_1 / d e = eps_1 (X - E^Q[X | H_1])
    w, _ = _tilted(tree, inst.X, e, lab)
    xq = cond_expect(tree, inst.X * w, 1, lab) / cond_expect(tree, w, 1, lab)
    d_eps1 = eps1 * (inst.X - xq)
    inner = cond_expect(tree, np.exp(-g * eps1) * d_eps1, 1, lab) / ce
    deriv = tree.expect(M1 * inner, 1) / (1.0 + EM)
    return float(c0), c1, lam, float(resid), float(deriv)


def solve_c0_curve(inst: SavingsInstance, check: bool = True) -> list[CurvePoint]:
    """Optimal ``(c_0, c_1, lambda)`` across the grid of risk parameters.

    Each point uses the unconstrained formulas and is kept when both
    consumptions come out strictly positive.  Otherwise the point is flagged
    out of regime and recomputed with the constrained one-period closed form.
    With ``check`` every point is also solved by the general active-set
    solver and the sup-norm gap stored in ``kkt_gap``.
    """
    out = []
    for e in inst.eps_grid:
        c0, c1, lam, resid, deriv = _interior_point(inst, e)
        ok = c0 > 0 and bool(np.all(c1 > 0))
        agent = inst.agent(e)
        if not ok:
            sol = one_period_closed_form(agent, inst.market, [np.ones(1), inst.M1])
            c0, c1, lam = sol.c0, sol.c1, sol.lam
            resid = abs(c0 + inst.tree.expect(inst.M1 * c1, 1) - inst.eps0
                        - inst.tree.expect(inst.M1 * agent.on(inst.tree)[1], 1))
            deriv = float("nan")
        pt = CurvePoint(float(e), c0, c1, lam, ok, resid, deriv,
                        variance=cond_variance(inst.tree, inst.X, e, inst.labels))
        if check:
            ref = solve_kkt(agent, inst.market).consumption
            pt.kkt_gap = float(max(abs(ref[0][0] - c0), np.abs(ref[1] - c1).max()))
        out.append(pt)
    return out


def eps0_threshold(inst: SavingsInstance) -> float:
    """Smallest ``eps_0`` for which every grid point has positive consumption.

    The interior formulas move ``c_0`` and every ``c_1`` by the same amount
    ``d eps_0 / (1 + E[M_1])``, so the threshold is exact rather than searched.
    Zero means every admissible ``eps_0`` works.
    """
    slope = 1.0 + inst.tree.expect(inst.M1, 1)
    worst = -np.inf
    for e in inst.eps_grid:
        c0, c1, *_ = _interior_point(inst, e)
        worst = max(worst, inst.eps0 - slope * min(c0, float(c1.min())))
    return max(float(worst), 0.0)


@dataclass
class MonotonicityReport:
    passed: bool
    max_violation: float
    location: tuple | None
    max_derivative: float
    variance_monotone: bool

    def as_dict(self) -> dict:
        return {"passed": self.passed, "max_violation": self.max_violation,
                "location": self.location, "max_derivative": self.max_derivative,
                "variance_monotone": self.variance_monotone}


def monotonicity_report(curve: list[CurvePoint], tol: float = MONO_TOL) -> MonotonicityReport:
    """Check that ``c_0`` does not increase along the risk grid.

    ``max_violation`` is the largest rise ``c_0(e_b) - c_0(e_a)`` over pairs
    ``e_a <= e_b`` and ``location`` the grid values where it occurs.
    """
    if any(not p.in_regime for p in curve):
        bad = [p.eps for p in curve if not p.in_regime]
        raise ValueError(f"points out of the positive-consumption regime at eps={bad}")
    pts = sorted(curve, key=lambda p: p.eps)
    c0 = np.array([p.c0 for p in pts])
    run_max = np.maximum.accumulate(-c0)  # -min over earlier points
    rise = c0 + run_max
    j = int(np.argmax(rise))
    worst = float(max(rise[j], 0.0))
    loc = None
    if worst > 0:
        i = int(np.argmin(c0[:j + 1]))
        loc = (pts[i].eps, pts[j].eps)
    var = np.array([p.variance for p in pts])
    var_ok = bool(np.all(np.diff(var, axis=0) >= -1e-12)) if len(pts) > 1 else True
    return MonotonicityReport(worst <= tol, worst, loc,
                              float(max(p.derivative for p in pts)), var_ok)


def fkg_slack(inst: SavingsInstance, e: float) -> dict:
    """Per-block covariance slacks that the monotonicity arguments rely on.

    ``variance``: ``E^Q[X] E^Q[e^{-eX}] - E^Q[X e^{-eX}]`` with
    ``dQ/dP ~ e^{2eX}``.  ``savings``: ``E^Q[e^{-g eps_1}] E^Q[X] -
    E^Q[X e^{-g eps_1}]`` with ``dQ/dP ~ e^{eX}``.  Both are non-negative.
    """
    tree, lab, X = inst.tree, inst.labels, inst.X

    def eq(w, y):
        return cond_expect(tree, w * y, 1, lab) / cond_expect(tree, w, 1, lab)

    w2 = _tilted(tree, X, 2 * e, lab)[0]
    d = np.exp(-e * X)
    s_var = eq(w2, X) * eq(w2, d) - eq(w2, X * d)
    w1 = _tilted(tree, X, e, lab)[0]
    u = np.exp(-inst.gamma * inst.endowment(e))
    s_sav = eq(w1, u) * eq(w1, X) - eq(w1, X * u)
    return {"variance": float(s_var.min()), "savings": float(s_sav.min())}


def random_instance(rng: np.random.Generator, n_states: int = 4, gamma: float = 1.0,
                    rho: float = 0.02, eps0: float = 5.0, measurable_x: bool = False,
                    eps_grid=DEFAULT_GRID) -> SavingsInstance:
    """Random one-period instance with two ``H_1`` blocks of at least two states."""
    if n_states < 4:
        raise ValueError("need at least four states")
    w = rng.uniform(0.2, 1.0, n_states)
    tree = build_tree([n_states], [w / w.sum()])
    cut = int(rng.integers(2, n_states - 1))
    labels = np.r_[np.zeros(cut, int), np.ones(n_states - cut, int)]
    M1 = rng.uniform(0.5, 1.0, 2)[labels]
    X = rng.uniform(0.0, 2.0, 2)[labels] if measurable_x else rng.uniform(0.0, 2.0, n_states)
    return SavingsInstance(tree, labels, M1, gamma, rho, eps0, X, eps_grid)
