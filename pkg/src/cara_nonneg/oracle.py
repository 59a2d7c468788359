"""Brute-force maximizers used as ground truth for the closed forms.

Neither path shares code with the closed forms or with the active-set solver
of :mod:`cara_nonneg.incomplete`: the complete-market oracle works on the raw
node vector of consumption, and the incomplete one on raw asset and bond
holdings per node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .complete import AgentSpec
from .errors import ConvergenceError
from .market import MarketSpec
from .probtree import Tree

# projected gradient schedule: sup-norm-capped gradient times
# PG_STEP / sqrt(1 + t / PG_DECAY)
PG_ITERS = 400
PG_STEP = 0.5
PG_DECAY = 20.0
# penalty ladder for the incomplete oracle
PENALTIES = (1e2, 1e4, 1e6, 1e8)


@dataclass
class OracleResult:
    argmax: np.ndarray
    value: float
    method: str
    iterations: int
    residuals: dict = field(default_factory=dict)
    consumption: list | None = None


def _weights(tree: Tree, agent: AgentSpec):
    return np.exp(-agent.rho * tree.node_levels()) * tree.flat_probs()


def _project_budget(y, q, b, nonneg):
    """Euclidean projection onto ``{q.c = b}`` (and ``c >= 0`` if ``nonneg``)."""
    if not nonneg:
        return y - (q @ y - b) / (q @ q) * q
    # c(tau) = max(y - tau q, 0); q.c(tau) is piecewise linear decreasing in
    # tau with breakpoints y/q.  With the j largest breakpoints positive,
    # tau = (sum q y - b) / sum q^2 over those j; take the first j whose tau
    # lies at or above the next breakpoint.
    bp = y / q
    order = np.argsort(bp)[::-1]
    tau = (np.cumsum(q[order] * y[order]) - b) / np.cumsum(q[order] ** 2)
    nxt = np.append(bp[order][1:], -np.inf)
    j = int(np.argmax(tau >= nxt))
    return np.maximum(y - tau[j] * q, 0.0)


def _newton_face(w, g, q, b, c, free, iters=200):
    """Damped Newton on the stationarity system of the free nodes.

    Unknowns are ``c`` on the free nodes and the budget multiplier ``mu``;
    the fixed nodes stay at zero.
    """
    idx = np.flatnonzero(free)
    c = c.copy()
    b_free = b - q[~free] @ c[~free]

    def resid(cf, mu):
        return np.append(g * w[idx] * np.exp(-g * cf) - mu * q[idx], q[idx] @ cf - b_free)

    cf = c[idx]
    mu = float(np.mean(g * w[idx] * np.exp(-g * cf) / q[idx]))
    r = resid(cf, mu)
    for _ in range(iters):
        if np.max(np.abs(r)) < 1e-15:
            break
        e = g * w[idx] * np.exp(-g * cf)
        n = idx.size
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = np.diag(-g * e)
        J[:n, n] = -q[idx]
        J[n, :n] = q[idx]
        step = np.linalg.solve(J, -r)
        t = 1.0
        while t > 1e-12:
            cf_new, mu_new = cf + t * step[:n], mu + t * step[n]
            r_new = resid(cf_new, mu_new)
            if np.linalg.norm(r_new) < (1 - 1e-4 * t) * np.linalg.norm(r):
                break
            t *= 0.5
        else:
            break
        cf, mu, r = cf_new, mu_new, r_new
    c[idx] = cf
    return c, mu


def oracle_complete(tree: Tree, agent: AgentSpec, xi, allow_negative: bool = False,
                    seed: int = 0) -> OracleResult:
    """Maximize utility over node consumption under the present-value budget.

    Projected gradient with diminishing steps from a seeded feasible point,
    followed by an active-set Newton polish on the Lagrangian system.
    """
    xi = tree.process(xi)
    gam = agent.gamma
    w = _weights(tree, agent)
    q = tree.flat_probs() * tree.flatten(xi)
    eps = tree.flatten(agent.on(tree))
    b = float(q @ eps)
    nonneg = not allow_negative

    rng = np.random.default_rng(seed)
    c = _project_budget(eps + 0.1 * rng.random(eps.size), q, b, nonneg)
    for t in range(PG_ITERS):
        grad = gam * w * np.exp(-gam * c)
        grad /= max(1.0, np.abs(grad).max())
        c = _project_budget(c + PG_STEP / np.sqrt(1 + t / PG_DECAY) * grad, q, b, nonneg)

    free = c > 1e-9 if nonneg else np.ones(c.size, bool)
    rounds = 0
    for rounds in range(1, 2 * c.size + 2):
        c[~free] = 0.0
        c, mu = _newton_face(w, gam, q, b, c, free)
        if not nonneg:
            break
        neg = free & (c < 0)
        if neg.any():
            free[np.argmin(np.where(free, c, np.inf))] = False
            continue
        # a node held at zero wants to consume if marginal utility there beats mu q
        gain = gam * w - mu * q
        gain[free] = -np.inf
        if gain.max() > 1e-14:
            free[int(np.argmax(gain))] = True
            continue
        break
    value = -float(w @ np.exp(-gam * c))
    res = {"budget": abs(float(q @ c) - b),
           "negativity": float(np.maximum(-c, 0.0).max()) if nonneg else 0.0}
    return OracleResult(c, value, "active-set-newton", PG_ITERS + rounds, res, tree.unflatten(c))


def _holdings_map(m: MarketSpec):
    """Map raw holdings ``(pi, phi)`` at every non-terminal node to ``c - eps``."""
    tree = m.tree
    off = tree.offsets()
    blocks = []
    for k in range(1, tree.horizon + 1):
        for p in range(tree.sizes[k - 1]):
            ch, pay, price = m.local(k, p)
            blk = np.zeros((tree.n_nodes, pay.shape[1]))
            blk[off[k] + ch] = pay
            blk[off[k - 1] + p] -= price
            blocks.append(blk)
    return np.hstack(blocks) if blocks else np.zeros((tree.n_nodes, 0))


def _damped_newton(f, g, h, x, iters=200):
    """Newton with minimum-norm steps (redundant holdings make ``h`` singular)
    and Armijo backtracking."""
    for it in range(1, iters + 1):
        gx = g(x)
        step = -np.linalg.lstsq(h(x), gx, rcond=None)[0]
        dec = -float(gx @ step)
        if dec < 1e-24:
            return x, it
        fx, t = f(x), 1.0
        while t > 1e-12 and f(x + t * step) > fx - 1e-4 * t * dec:
            t *= 0.5
        if t <= 1e-12:
            return x, it
        x = x + t * step
    return x, iters


def oracle_incomplete(agent: AgentSpec, m: MarketSpec) -> OracleResult:
    """Maximize utility over raw holdings with ``c >= 0``.

    Quadratic-penalty continuation over :data:`PENALTIES`, an SLSQP pass with
    the linear constraints, then Newton on the estimated face.
    """
    tree = m.tree
    gam = agent.gamma
    w = _weights(tree, agent)
    eps = tree.flatten(agent.on(tree))
    A = _holdings_map(m)
    n = A.shape[1]

    def f(a):
        return float(w @ np.exp(-gam * (eps + A @ a)))

    def grad(a):
        return -gam * A.T @ (w * np.exp(-gam * (eps + A @ a)))

    def hess(a):
        e = w * np.exp(-gam * (eps + A @ a))
        return A.T @ ((gam * gam * e)[:, None] * A)

    a = np.zeros(n)
    iters = 0
    for pen in PENALTIES:
        def fp(a, pen=pen):
            v = np.minimum(eps + A @ a, 0.0)
            return f(a) + 0.5 * pen * float(v @ v)

        def gp(a, pen=pen):
            v = np.minimum(eps + A @ a, 0.0)
            return grad(a) + pen * A.T @ v

        def hp(a, pen=pen):
            act = (eps + A @ a) < 0
            return hess(a) + pen * A[act].T @ A[act]

        a, nit = _damped_newton(fp, gp, hp, a)
        iters += nit
    cons = {"type": "ineq", "fun": lambda a: eps + A @ a, "jac": lambda a: A}
    r = minimize(f, a, jac=grad, constraints=[cons], method="SLSQP",
                 options={"ftol": 1e-16, "maxiter": 500})
    a, iters = r.x, iters + r.nit

    c = eps + A @ a
    active = np.flatnonzero(c < 1e-7)
    for _ in range(50):
        iters += 1
        g, H = grad(a), hess(a)
        if active.size:
            _, s, vt = np.linalg.svd(A[active])
            rank = int(np.sum(s > 1e-12 * max(s[0], 1.0)))
            Z = vt[rank:].T
            # restore the face exactly, then take a reduced Newton step
            a = a - np.linalg.lstsq(A[active], (eps + A @ a)[active], rcond=None)[0]
        else:
            Z = np.eye(n)
        if Z.shape[1] == 0:
            break
        step = -Z @ np.linalg.lstsq(Z.T @ H @ Z, Z.T @ g, rcond=None)[0]
        a = a + step
        if np.max(np.abs(A @ step)) < 1e-15:
            break
    c = eps + A @ a
    c[active] = 0.0
    if c.min() < -1e-9:
        raise ConvergenceError("incomplete oracle left the feasible set", {"min_c": float(c.min())})
    c = np.maximum(c, 0.0)
    value = -float(w @ np.exp(-gam * c))
    return OracleResult(a, value, "penalty-continuation", iters,
                        {"negativity": 0.0, "slsqp_status": int(r.status)}, tree.unflatten(c))
