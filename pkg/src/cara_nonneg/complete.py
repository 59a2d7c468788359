"""Exponential utility maximization in a complete market.

The agent maximizes ``sum_k -exp(-rho k) E[exp(-gamma c_k)]`` subject to the
single budget constraint ``sum_k E[xi_k c_k] = sum_k E[xi_k eps_k]``, with or
without the constraint ``c >= 0``.  Both problems have closed-form solutions
driven by a scalar Lagrange multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._roots import solve_decreasing
from .probtree import Tree


@dataclass(frozen=True, eq=False)
class AgentSpec:
    """Exponential-utility agent: risk aversion, impatience, endowment stream."""

    gamma: float
    rho: float
    endowment: tuple

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("risk aversion gamma must be positive")
        if not self.rho >= 0:
            raise ValueError("impatience rho must be non-negative")
        endow = tuple(np.atleast_1d(np.asarray(e, dtype=float)) for e in self.endowment)
        if any(np.any(e < 0) for e in endow):
            raise ValueError("endowments must be non-negative")
        object.__setattr__(self, "endowment", endow)

    def on(self, tree: Tree) -> list[np.ndarray]:
        return tree.process(self.endowment)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "rho": self.rho,
                "endowment": [e.tolist() for e in self.endowment]}


@dataclass
class ConsumptionSolution:
    consumption: list
    multiplier: float
    utility: float
    budget_residual: float


def _check_spd(tree: Tree, xi) -> list[np.ndarray]:
    xi = tree.process(xi)
    if min(x.min() for x in xi) <= 0:
        raise ValueError("state price density must be strictly positive on every node")
    return xi


def present_value(tree: Tree, xi, x) -> float:
    return sum(tree.expect(xi[k] * x[k], k) for k in range(tree.horizon + 1))


def utility(tree: Tree, agent: AgentSpec, c) -> float:
    return -sum(np.exp(-agent.rho * k) * tree.expect(np.exp(-agent.gamma * np.asarray(c[k])), k)
                for k in range(tree.horizon + 1))


def _log_bliss(tree, agent, xi):
    # log(gamma / (e^{rho k} xi_k)): consumption is (1/gamma)(this - log lambda)
    return [np.log(agent.gamma) - agent.rho * k - np.log(xi[k]) for k in range(tree.horizon + 1)]


def _solution(tree, agent, xi, c, lam):
    pv = present_value(tree, xi, agent.on(tree))
    return ConsumptionSolution(c, lam, utility(tree, agent, c),
                               abs(present_value(tree, xi, c) - pv))


def solve_unconstrained(tree: Tree, agent: AgentSpec, xi) -> ConsumptionSolution:
    """Optimal consumption when negative consumption is allowed.

    The budget equation is linear in ``log lambda``, so the multiplier is
    available in closed form.
    """
    xi = _check_spd(tree, xi)
    pv = present_value(tree, xi, agent.on(tree))
    if pv <= 0:
        raise ValueError("endowment has zero present value")
    b = _log_bliss(tree, agent, xi)
    q = [tree.probs[k] * xi[k] for k in range(tree.horizon + 1)]
    Q = sum(x.sum() for x in q)
    log_lam = (sum(np.dot(q[k], b[k]) for k in range(tree.horizon + 1)) - agent.gamma * pv) / Q
    c = [(b[k] - log_lam) / agent.gamma for k in range(tree.horizon + 1)]
    return _solution(tree, agent, xi, c, float(np.exp(log_lam)))


def psi(tree: Tree, agent: AgentSpec, xi, lam: float) -> float:
    """Present value of the positive-part demand at multiplier ``lam``.

    ``psi(lam) = sum_k E[xi_k I(lam e^{rho k} xi_k)]`` with
    ``I(y) = (1/gamma) (log(gamma/y))^+``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    xi = _check_spd(tree, xi)
    b = _log_bliss(tree, agent, xi)
    ll = np.log(lam)
    return float(sum(np.dot(tree.probs[k] * xi[k], np.maximum(b[k] - ll, 0.0))
                     for k in range(tree.horizon + 1)) / agent.gamma)


def solve_lambda_star(tree: Tree, agent: AgentSpec, xi) -> float:
    """Multiplier ``lambda*`` with ``psi(lambda*)`` equal to the endowment value."""
    xi = _check_spd(tree, xi)
    pv = present_value(tree, xi, agent.on(tree))
    if pv <= 0:
        raise ValueError("endowment has zero present value; lambda* is not unique")
    return solve_decreasing(lambda lam: psi(tree, agent, xi, lam), pv, x0=agent.gamma)


def constrained_consumption(tree: Tree, agent: AgentSpec, xi) -> ConsumptionSolution:
    """Optimal non-negative consumption: the positive part of the unconstrained
    form, evaluated at ``lambda*`` instead of the unconstrained multiplier."""
    xi = _check_spd(tree, xi)
    lam = solve_lambda_star(tree, agent, xi)
    b = _log_bliss(tree, agent, xi)
    c = [np.maximum(b[k] - np.log(lam), 0.0) / agent.gamma for k in range(tree.horizon + 1)]
    return _solution(tree, agent, xi, c, lam)


def positivity_certificate(tree: Tree, agent: AgentSpec, xi, C: float):
    """Sufficient condition for strictly positive optimal consumption.

    Checks ``xi_k < C`` and ``eps_k > (log(C / xi_k) + rho (T - k)) / gamma`` on
    every node.  Returns ``(True, consumption)`` with the explicit strictly
    positive stream when both hold, ``(False, None)`` otherwise.  The stream
    is checked against :func:`constrained_consumption` before returning.
    """
    if not C > 0:
        raise ValueError("C must be positive")
    xi = _check_spd(tree, xi)
    eps = agent.on(tree)
    T = tree.horizon
    for k in range(T + 1):
        if np.any(xi[k] >= C):
            return False, None
        bound = (np.log(C / xi[k]) + agent.rho * (T - k)) / agent.gamma
        if np.any(eps[k] <= bound):
            return False, None
    num = sum(tree.expect(xi[k] * (agent.gamma * eps[k] + np.log(xi[k]) + agent.rho * k), k)
              for k in range(T + 1))
    den = sum(tree.expect(xi[k], k) for k in range(T + 1))
    c = [(num / den - agent.rho * k - np.log(xi[k])) / agent.gamma for k in range(T + 1)]
    ref = constrained_consumption(tree, agent, xi).consumption
    gap = max(np.max(np.abs(a - b)) for a, b in zip(c, ref))
    if gap > 1e-9 * max(1.0, max(np.abs(a).max() for a in c)):
        raise RuntimeError(f"closed form disagrees with the constrained solution by {gap:.3e}")
    return True, c


def random_agent(rng: np.random.Generator, tree: Tree, zero_frac: float = 0.3) -> AgentSpec:
    """Agent with random preferences and a sparse endowment.

    About ``zero_frac`` of the nodes receive nothing, which makes the
    non-negativity constraint bind on typical draws; the root endowment is
    kept positive so the endowment always has positive value.
    """
    endow = []
    for k, n in enumerate(tree.sizes):
        e = rng.uniform(0.0, 0.5, n) * (rng.random(n) >= zero_frac)
        endow.append(e + (1e-3 if k == 0 else 0.0))
    return AgentSpec(float(rng.uniform(0.5, 3.0)), float(rng.uniform(0.0, 0.2)), tuple(endow))
