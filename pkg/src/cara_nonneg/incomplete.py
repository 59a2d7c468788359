"""Exponential utility maximization in an incomplete market with ``c >= 0``.

The budget set is parameterized by the coordinates ``theta_k`` of the wealth
``W_k`` on a basis of the wealth space ``L_k``.  Consumption is then affine in
``theta``::

    c_k = eps_k + W_k - (price at level k of the portfolio paying W_{k+1})

so the problem is a smooth strictly convex minimization over ``theta`` under
the linear constraints ``c >= 0``, solved here by a primal active-set Newton
method.  Multipliers of the active constraints give the process ``lambda_k``
with ``lambda_k c_k = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import nnls

from ._roots import solve_decreasing
from .complete import AgentSpec, utility
from .errors import ConvergenceError
from .market import MarketSpec, aggregate_spd
from .probtree import cond_expect, ess_inf

MAX_ITER = 500


@dataclass
class PortfolioStrategy:
    """Holdings ``pi[k]`` (shape ``(n_k, m)``) and bond ``phi[k]`` chosen at level k.

    Entries exist for ``k = 0..T-1``; nothing is held after the last period.
    """

    pi: list
    phi: list


@dataclass
class KKTSolution:
    consumption: list
    strategy: PortfolioStrategy
    multipliers: list
    wealth: list
    utility: float
    multipliers_unique: bool
    iterations: int


@dataclass
class KKTReport:
    projection: float
    slackness: float
    sign: float
    budget: float
    negativity: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.projection, self.slackness, self.sign, self.budget,
                   self.negativity) <= self.tol

    def as_dict(self) -> dict:
        return {"projection": self.projection, "slackness": self.slackness,
                "sign": self.sign, "budget": self.budget,
                "negativity": self.negativity}


def budget_map(m: MarketSpec):
    """Affine map ``theta -> c - eps`` as a dense matrix on flattened nodes.

    Returns ``(A, blocks)`` where ``blocks[k-1]`` slices the columns of
    period ``k`` inside ``theta``.
    """
    tree = m.tree
    off = tree.offsets()
    cols, blocks, start = [], [], 0
    for k in range(1, tree.horizon + 1):
        B, col_parent, col_cost = m.wealth_basis(k)
        Ak = np.zeros((tree.n_nodes, B.shape[1]))
        Ak[off[k]:off[k + 1]] = B
        Ak[off[k - 1] + col_parent, np.arange(B.shape[1])] -= col_cost
        cols.append(Ak)
        blocks.append(slice(start, start + B.shape[1]))
        start += B.shape[1]
    A = np.hstack(cols) if cols else np.zeros((tree.n_nodes, 0))
    return A, blocks


class _Problem:
    """``min sum_n w_n exp(-gamma c_n)`` with ``c = eps + A theta >= 0``."""

    def __init__(self, agent: AgentSpec, m: MarketSpec):
        tree = m.tree
        self.gamma = agent.gamma
        self.eps = tree.flatten(agent.on(tree))
        self.w = np.exp(-agent.rho * tree.node_levels()) * tree.flat_probs()
        self.A, self.blocks = budget_map(m)

    def consumption(self, theta):
        return self.eps + self.A @ theta

    def f(self, theta):
        return float(self.w @ np.exp(-self.gamma * self.consumption(theta)))

    def grad_hess(self, theta):
        e = self.w * np.exp(-self.gamma * self.consumption(theta))
        g = -self.gamma * (self.A.T @ e)
        H = self.A.T @ ((self.gamma ** 2 * e)[:, None] * self.A)
        return g, H


def _null_space(Aw, n):
    if Aw.shape[0] == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(Aw)
    r = int(np.sum(s > 1e-12 * max(s[0], 1.0))) if s.size else 0
    return vt[r:].T


def _active_set(prob: _Problem, theta0):
    """Primal active-set Newton from a feasible ``theta0``.

    Returns ``(theta, active, mu, iterations)`` where ``mu`` are the
    multipliers of the active constraints.
    """
    n = prob.A.shape[1]
    theta = np.array(theta0, dtype=float)
    c = prob.consumption(theta)
    active = list(np.flatnonzero(c <= 0.0))
    for it in range(1, MAX_ITER + 1):
        g, H = prob.grad_hess(theta)
        Aw = prob.A[active]
        Z = _null_space(Aw, n)
        d = np.zeros(n)
        if Z.shape[1]:
            gr = Z.T @ g
            d = -Z @ np.linalg.solve(Z.T @ H @ Z, gr)
        decrement = -float(g @ d)
        scale = max(1.0, prob.f(theta))
        if decrement > 1e-22 * scale:
            Ad = prob.A @ d
            c = prob.consumption(theta)
            inactive = np.setdiff1d(np.arange(len(c)), active)
            falling = inactive[Ad[inactive] < 0]
            ratios = np.maximum(c[falling], 0.0) / -Ad[falling]
            alpha_max = float(ratios.min()) if ratios.size else np.inf
            alpha = min(1.0, alpha_max)
            f0 = prob.f(theta)
            # Armijo backtracking; close to the optimum the decrease drops
            # below rounding in f, and the pure Newton step is taken instead
            while (decrement > 1e-12 * scale and alpha > 1e-14
                   and prob.f(theta + alpha * d) > f0 - 1e-4 * alpha * decrement):
                alpha *= 0.5
            # a failed line search means the face optimum is reached to
            # machine precision; fall through to the multiplier check
            if alpha > 1e-14 or alpha_max == 0:
                theta = theta + alpha * d
                if alpha == alpha_max:
                    blocking = falling[ratios <= alpha_max * (1 + 1e-12)]
                    active.extend(int(b) for b in blocking)
                    active.sort()
                continue
        # stationary on the current face: check multiplier signs
        if not active:
            return theta, active, np.zeros(0), it
        Aw = prob.A[active]
        mu, res = nnls(Aw.T, g)
        if res <= 1e-10 * max(1.0, np.linalg.norm(g)):
            return theta, active, mu, it
        mu_ls = np.linalg.lstsq(Aw.T, g, rcond=None)[0]
        j = int(np.argmin(mu_ls))
        if mu_ls[j] >= 0:
            return theta, active, mu, it
        active.pop(j)
    raise ConvergenceError("active-set iteration limit reached",
                           {"iterations": MAX_ITER, "f": prob.f(theta)})


def _random_start(prob: _Problem, rng):
    n = prob.A.shape[1]
    d = rng.standard_normal(n)
    Ad = prob.A @ d
    neg = Ad < 0
    t_max = np.min(prob.eps[neg] / -Ad[neg]) if neg.any() else 1.0
    return rng.uniform(0.1, 0.9) * min(t_max, 1.0) * d


def solve_kkt(agent: AgentSpec, m: MarketSpec, starts: int = 5, seed: int = 0,
              agree_tol: float = 1e-7) -> KKTSolution:
    """Maximize expected discounted utility over the incomplete budget set.

    The solve from ``theta = 0`` (consumption equal to the endowment, always
    feasible) is repeated from ``starts`` random feasible portfolios; all runs
    must produce the same consumption to ``agree_tol``.
    """
    tree = m.tree
    prob = _Problem(agent, m)
    theta, active, mu, iters = _active_set(prob, np.zeros(prob.A.shape[1]))
    c = np.maximum(prob.consumption(theta), 0.0)
    c[active] = 0.0
    rng = np.random.default_rng(seed)
    for _ in range(starts):
        th2, act2, _, _ = _active_set(prob, _random_start(prob, rng))
        c2 = np.maximum(prob.consumption(th2), 0.0)
        c2[act2] = 0.0
        gap = float(np.max(np.abs(c2 - c))) if c.size else 0.0
        if gap > agree_tol:
            raise ConvergenceError("multi-start runs disagree", {"gap": gap})

    nu = np.zeros(tree.n_nodes)
    nu[active] = mu
    unique = not active or np.linalg.matrix_rank(prob.A[active].T) == len(active)
    lam = nu / tree.flat_probs()

    wealth = [np.zeros(1)]
    pi, phi = [], []
    for k in range(1, tree.horizon + 1):
        B, _, _ = m.wealth_basis(k)
        Wk = B @ theta[prob.blocks[k - 1]]
        wealth.append(Wk)
        p, f = m.replicate(k, Wk)
        pi.append(p)
        phi.append(f)
    cons = tree.unflatten(c)
    return KKTSolution(cons, PortfolioStrategy(pi, phi), tree.unflatten(lam), wealth,
                       utility(tree, agent, cons), bool(unique), iters)


def marginal_spd(tree, agent: AgentSpec, consumption, multipliers) -> list[np.ndarray]:
    """``Z_k = e^{-rho k} gamma e^{-gamma c_k} + lambda_k`` (not normalized)."""
    return [np.exp(-agent.rho * k) * agent.gamma * np.exp(-agent.gamma * np.asarray(consumption[k]))
            + np.asarray(multipliers[k]) for k in range(tree.horizon + 1)]


def strategy_consumption(agent: AgentSpec, m: MarketSpec, strategy: PortfolioStrategy):
    """Consumption implied by a strategy through the self-financing identity."""
    tree = m.tree
    eps = agent.on(tree)
    c = [e.copy() for e in eps]
    for k in range(1, tree.horizon + 1):
        pi, phi = np.asarray(strategy.pi[k - 1]), np.asarray(strategy.phi[k - 1])
        par = tree.parents[k - 1]
        c[k] += np.einsum("ij,ij->i", m.payoffs[k - 1], pi[par]) + phi[par] * (1 + m.rate[k - 1][par])
        c[k - 1] -= np.einsum("ij,ij->i", m.prices[k - 1], pi) + phi
    return c


def verify_kkt(sol: KKTSolution, agent: AgentSpec, m: MarketSpec, tol: float = 1e-8,
               M=None) -> KKTReport:
    """Residuals of the optimality conditions for a candidate solution.

    projection
        ``max |P_L[Z_k / Z_{k-1}] - M_k / M_{k-1}|`` over periods, with ``M``
        the aggregate SPD.
    slackness
        ``max |lambda_k c_k|``.
    sign
        Largest negative part of ``lambda``.
    budget
        Gap between ``consumption`` and the consumption recomputed from the
        strategy.
    negativity
        Largest negative part of ``consumption``.
    """
    tree = m.tree
    if M is None:
        M = aggregate_spd(m, require_positive=False)
    c = tree.process(sol.consumption)
    lam = tree.process(sol.multipliers)
    Z = marginal_spd(tree, agent, c, lam)
    proj = 0.0
    for k in range(1, tree.horizon + 1):
        ratio = Z[k] / tree.lift(Z[k - 1], k)
        target = M[k] / tree.lift(M[k - 1], k)
        proj = max(proj, float(np.max(np.abs(m.project(k, ratio) - target))))
    slack = max(float(np.max(np.abs(l * x))) for l, x in zip(lam, c))
    sign = max(float(np.max(np.maximum(-l, 0.0))) for l in lam)
    implied = strategy_consumption(agent, m, sol.strategy)
    budget = max(float(np.max(np.abs(a - b))) for a, b in zip(implied, c))
    neg = max(float(np.max(np.maximum(-x, 0.0))) for x in c)
    return KKTReport(proj, slack, sign, budget, neg, tol)


class OnePeriodSolution(NamedTuple):
    c0: float
    c1: np.ndarray
    lam: float
    interior: np.ndarray


def one_period_closed_form(agent: AgentSpec, m: MarketSpec, M=None) -> OnePeriodSolution:
    """Explicit optimum for a one-period market with ``L_1 = L^2(H_1)``.

    With ``Phi = e^{gamma eps_1} E[e^{-gamma eps_1} | H_1]``, the time-1
    consumption is ``(1/gamma) log(Phi / (lambda M_1))`` on blocks where
    ``essinf[e^{gamma eps_1} | H_1] E[e^{-gamma eps_1} | H_1] > lambda M_1``
    and ``eps_1 - essinf[eps_1 | H_1]`` elsewhere; ``c_0`` is
    ``(1/gamma)(log(1/lambda) + rho)^+`` and ``lambda`` balances the budget.

    ``interior`` marks the nodes on the first branch.
    """
    tree = m.tree
    if tree.horizon != 1 or not m.is_type_c:
        raise ValueError("closed form needs a one-period market of type C")
    if M is None:
        M = aggregate_spd(m)
    g, rho = agent.gamma, agent.rho
    eps0, eps1 = agent.on(tree)
    lab = m.wealth_spaces[0]
    M1 = M[1]
    cexp = cond_expect(tree, np.exp(-g * eps1), 1, lab)
    low = ess_inf(tree, eps1, 1, lab)
    log_phi = g * eps1 + np.log(cexp)
    log_thresh = g * low + np.log(cexp) - np.log(M1)  # interior iff log(lambda) < this

    def parts(lam):
        ll = np.log(lam)
        c0 = max(np.log(1.0 / lam) + rho, 0.0) / g
        inner = ll < log_thresh
        c1 = np.where(inner, (log_phi - np.log(M1) - ll) / g, eps1 - low)
        return c0, c1, inner

    def value(lam):
        c0, c1, _ = parts(lam)
        return c0 + tree.expect(M1 * c1, 1)

    pv = float(eps0[0]) + tree.expect(M1 * eps1, 1)
    lam_flat = float(np.exp(max(rho, log_thresh.max())))
    if pv <= value(lam_flat) * (1 + 1e-14):
        lam = lam_flat
    else:
        lam = solve_decreasing(value, pv, x0=min(1.0, lam_flat))
    c0, c1, inner = parts(lam)
    return OnePeriodSolution(float(c0), c1, float(lam), inner)
