"""Complete-market equilibrium among exponential-utility agents.

For weights ``lambda_i > 0`` let ``beta_i(k) = gamma_i / (lambda_i e^{rho_i k})``.
Market clearing ``sum_i I_i(lambda_i e^{rho_i k} xi_k) = eps_k`` with
``I_i(y) = (1/gamma_i) (log(gamma_i / y))^+`` pins the state price density
node by node: if the agents with the ``N - j + 1`` largest ``beta`` are the
ones consuming, then::

    log xi_k = (sum_{l>=j} log(beta_{i_l}) / gamma_{i_l} - eps_k) / sum_{l>=j} 1 / gamma_{i_l}

and this regime is active exactly when ``eta_j(k) <= eps_k < eta_{j-1}(k)``.
The weights are then fixed by the agents' budget equations.

Multiplying all weights by ``s`` divides the candidate density by ``s``, so
weights are always reported normalized to ``xi_0 = 1``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .complete import AgentSpec, constrained_consumption
from .errors import ConvergenceError
from .market import MarketSpec, implied_rate, verify_spd
from .probtree import Tree, build_tree


@dataclass(frozen=True, eq=False)
class EconomySpec:
    tree: Tree
    agents: tuple

    def __post_init__(self):
        if not self.agents:
            raise ValueError("economy needs at least one agent")
        object.__setattr__(self, "agents", tuple(self.agents))
        for a in self.agents:
            a.on(self.tree)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([a.gamma for a in self.agents])

    @property
    def rhos(self) -> np.ndarray:
        return np.array([a.rho for a in self.agents])

    @property
    def endowments(self) -> list:
        return [a.on(self.tree) for a in self.agents]

    @property
    def aggregate(self) -> list[np.ndarray]:
        ends = self.endowments
        return [sum(e[k] for e in ends) for k in range(self.tree.horizon + 1)]

    @property
    def strictly_positive(self) -> bool:
        return all(np.all(e[k] > 0) for e in self.endowments for k in range(self.tree.horizon + 1))


@dataclass
class EquilibriumSolution:
    weights: np.ndarray
    spd: list
    consumptions: list
    residuals: dict = field(default_factory=dict)
    admissible: bool = True

    def max_residual(self) -> float:
        return max(float(np.max(np.abs(v))) for v in self.residuals.values())


def _check_weights(weights, n):
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"need {n} weights, got {w.size}")
    if np.any(~(w > 0)):
        raise ValueError("weights must be strictly positive")
    return w


def log_betas(log_weights, gammas, rhos, k):
    """``log beta_i(k)``; broadcasts over leading axes of ``log_weights``."""
    return np.log(gammas) - np.asarray(log_weights) - rhos * k


def betas(weights, agents, k: int):
    """``beta_i(k)`` and the ascending order ``i_1(k)..i_N(k)`` (stable by index)."""
    w = _check_weights(weights, len(agents))
    g = np.array([a.gamma for a in agents])
    r = np.array([a.rho for a in agents])
    b = np.exp(log_betas(np.log(w), g, r, k))
    return b, np.argsort(b, kind="stable")


def _eta_sorted(lb_sorted, g_sorted):
    """``eta_1..eta_N`` per row from sorted ``log beta`` (rows broadcast)."""
    N = lb_sorted.shape[-1]
    inv = 1.0 / g_sorted
    # suffix sums over l > j of log(beta_l)/gamma_l and of 1/gamma_l
    s_lb = np.flip(np.cumsum(np.flip(lb_sorted * inv, -1), -1), -1)
    s_inv = np.flip(np.cumsum(np.flip(np.broadcast_to(inv, lb_sorted.shape), -1), -1), -1)
    after_lb = np.concatenate([s_lb[..., 1:], np.zeros(lb_sorted.shape[:-1] + (1,))], -1)
    after_inv = np.concatenate([s_inv[..., 1:], np.zeros(lb_sorted.shape[:-1] + (1,))], -1)
    eta = after_lb - lb_sorted * after_inv
    eta[..., N - 1] = 0.0
    return np.maximum(eta, 0.0), s_lb, s_inv


def etas(weights, agents, k: int) -> np.ndarray:
    """``(eta_0(k), ..., eta_N(k))`` with ``eta_0 = inf`` and ``eta_N = 0``."""
    b, order = betas(weights, agents, k)
    g = np.array([a.gamma for a in agents])[order]
    eta, _, _ = _eta_sorted(np.log(b[order])[None, :], g)
    return np.concatenate([[np.inf], eta[0]])


def log_spd_rows(lb, gammas, eps):
    """Log candidate density for rows of ``log beta`` and aggregate endowments.

    Parameters
    ----------
    lb : ndarray, shape (P, N)
    gammas : ndarray, shape (N,)
    eps : ndarray, shape (P,)

    Returns
    -------
    log_xi : ndarray, shape (P,)
    regime : ndarray, shape (P,)
        Active ``j`` in ``1..N``.
    """
    lb = np.atleast_2d(lb)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), lb.shape[:1])
    order = np.argsort(lb, axis=1, kind="stable")
    lbs = np.take_along_axis(lb, order, 1)
    gs = gammas[order]
    eta, s_lb, s_inv = _eta_sorted(lbs, gs)
    j = np.sum(eta > eps[:, None], axis=1)  # zero-based index of the active regime
    rows = np.arange(lb.shape[0])
    log_xi = (s_lb[rows, j] - eps) / s_inv[rows, j]
    return log_xi, j + 1


def candidate_spd(weights, economy: EconomySpec) -> list[np.ndarray]:
    """Nodewise density implied by clearing at the given weights (not normalized)."""
    w = _check_weights(weights, economy.n_agents)
    out = []
    for k, eps in enumerate(economy.aggregate):
        if np.any(eps < 0):
            raise ValueError("aggregate endowment must be non-negative")
        lb = log_betas(np.log(w), economy.gammas, economy.rhos, k)
        lx, _ = log_spd_rows(np.broadcast_to(lb, (eps.size, lb.size)), economy.gammas, eps)
        out.append(np.exp(lx))
    return out


def demands(weights, economy: EconomySpec, xi) -> list[list[np.ndarray]]:
    """``I_i(lambda_i e^{rho_i k} xi_k)`` for every agent."""
    w = _check_weights(weights, economy.n_agents)
    out = []
    for i, a in enumerate(economy.agents):
        out.append([np.maximum(np.log(a.gamma / (w[i] * np.exp(a.rho * k) * xi[k])), 0.0) / a.gamma
                    for k in range(economy.tree.horizon + 1)])
    return out


def _pv(tree, xi, x):
    return sum(tree.expect(xi[k] * x[k], k) for k in range(tree.horizon + 1))


def budget_residuals(weights, economy: EconomySpec, xi=None) -> np.ndarray:
    """Present value of each agent's demand minus that of the endowment.

    ``xi`` defaults to :func:`candidate_spd` at ``weights``.
    """
    tree = economy.tree
    if xi is None:
        xi = candidate_spd(weights, economy)
    dem = demands(weights, economy, xi)
    return np.array([_pv(tree, xi, dem[i]) - _pv(tree, xi, e)
                     for i, e in enumerate(economy.endowments)])


def normalize_weights(weights, economy: EconomySpec) -> np.ndarray:
    """Rescale weights so the candidate density has ``xi_0 = 1``."""
    w = _check_weights(weights, economy.n_agents)
    return w * candidate_spd(w, economy)[0][0]


def regime_consistency(weights, economy: EconomySpec) -> int:
    """Count nodes where ``xi_k <= beta_{i_j}(k)`` and ``eps_k >= eta_j(k)``
    disagree for some ``j`` (away from exact ties)."""
    xi = candidate_spd(weights, economy)
    bad = 0
    for k, eps in enumerate(economy.aggregate):
        b, order = betas(weights, economy.agents, k)
        eta = etas(weights, economy.agents, k)[1:]
        for j in range(economy.n_agents):
            clear = np.abs(eps - eta[j]) > 1e-9 * max(1.0, eta[j])
            lhs = xi[k] <= b[order[j]]
            rhs = eps >= eta[j]
            bad += int(np.sum(clear & (lhs != rhs)))
    return bad


def certify(economy: EconomySpec, weights, xi) -> EquilibriumSolution:
    """Equilibrium diagnostics for a density and weights.

    Each agent's consumption is re-solved with
    :func:`~cara_nonneg.complete.constrained_consumption` under ``xi``;
    residuals report clearing of those consumptions, the budget equations at
    ``weights``, the clearing identity of the demands at ``weights``, the
    normalization of ``xi``, and the pricing of the implied bond.
    """
    tree = economy.tree
    w = _check_weights(weights, economy.n_agents)
    cons = [constrained_consumption(tree, a, xi).consumption for a in economy.agents]
    agg = economy.aggregate
    dem = demands(w, economy, xi)
    clearing = max(float(np.max(np.abs(sum(c[k] for c in cons) - agg[k])))
                   for k in range(tree.horizon + 1))
    identity = max(float(np.max(np.abs(sum(d[k] for d in dem) - agg[k])))
                   for k in range(tree.horizon + 1))
    gap = max(float(np.max(np.abs(c[k] - d[k]))) for c, d in zip(cons, dem)
              for k in range(tree.horizon + 1))
    bond = MarketSpec.from_assets(tree, [], implied_rate(tree, xi))
    res = {
        "budget": budget_residuals(w, economy, xi),
        "clearing": clearing,
        "identity": identity,
        "demand_gap": gap,
        "normalization": abs(float(xi[0][0]) - 1.0),
        "spd": verify_spd(bond, xi).max_residual,
    }
    return EquilibriumSolution(w, xi, cons, res)


def _from_free(u, economy):
    return normalize_weights(np.exp(np.append(u, 0.0)), economy)


def _newton(F, u, tol=1e-13, max_iter=100, h=1e-7):
    """Damped Newton with a central-difference Jacobian and min-norm steps."""
    r = F(u)
    for _ in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            break
        J = np.empty((r.size, u.size))
        for j in range(u.size):
            e = np.zeros(u.size)
            e[j] = h
            J[:, j] = (F(u + e) - F(u - e)) / (2 * h)
        step = -np.linalg.lstsq(J, r, rcond=None)[0]
        # log-weights: cap the step so exp() stays finite
        step *= min(1.0, 5.0 / max(np.max(np.abs(step)), 1e-300))
        t, n0 = 1.0, np.linalg.norm(r)
        while t > 1e-10:
            u_new = u + t * step
            try:
                r_new = F(u_new)
            except ValueError:
                r_new = np.full_like(r, np.inf)
            if np.all(np.isfinite(r_new)) and np.linalg.norm(r_new) < (1 - 1e-4 * t) * n0:
                break
            t *= 0.5
        else:
            break
        u, r = u_new, r_new
    return u, r


def default_starts(economy: EconomySpec, n_grid: int = 9, span: float = 6.0) -> list[np.ndarray]:
    """Log-uniform grid over weight ratios plus the autarky warm start."""
    N = economy.n_agents
    autarky = np.array([a.gamma * math.exp(-a.gamma * float(e[0][0]))
                        for a, e in zip(economy.agents, economy.endowments)])
    starts = [autarky]
    if N > 1:
        per_dim = max(2, int(round(n_grid ** (1.0 / (N - 1)))) if N > 2 else n_grid)
        grid = np.linspace(-span, span, per_dim)
        for u in itertools.product(grid, repeat=N - 1):
            starts.append(np.exp(np.append(u, 0.0)) * autarky[-1])
    return starts


def solve_equilibrium(economy: EconomySpec, starts=None, n_grid: int = 9,
                      tol: float = 1e-8) -> list[EquilibriumSolution]:
    """All equilibria reached by Newton from the given starting weights.

    Weights are parameterized by ``N - 1`` log-ratios and normalized to
    ``xi_0 = 1``; the first ``N - 1`` budget equations are solved and the last
    one, redundant by Walras' law, is checked at the solution.  Solutions are
    deduplicated at relative distance ``1e-6``.
    """
    if not economy.strictly_positive:
        raise ValueError("endowments must be strictly positive on every node; "
                         "use vanishing_endowment_family otherwise")
    N = economy.n_agents
    if starts is None:
        starts = default_starts(economy, n_grid)
    found, best = [], np.inf
    for s in starts:
        s = _check_weights(s, N)
        u0 = np.log(s[:-1] / s[-1])
        if N == 1:
            u, r = u0, np.zeros(0)
        else:
            u, r = _newton(lambda u: budget_residuals(_from_free(u, economy), economy)[:-1], u0)
        w = _from_free(u, economy)
        full = budget_residuals(w, economy)
        best = min(best, float(np.max(np.abs(full))))
        if np.max(np.abs(full)) > tol:
            continue
        if any(np.linalg.norm(w - f) <= 1e-6 * np.linalg.norm(f) for f in found):
            continue
        found.append(w)
    if not found:
        raise ConvergenceError("no start converged", {"best_budget_residual": best})
    sols = [certify(economy, w, candidate_spd(w, economy)) for w in found]
    sols.sort(key=lambda s: tuple(s.weights))
    return sols


# -- one-period deterministic two-agent economy -----------------------------

def two_agent_economy(eps0, eps1, gammas=(1.0, 1.0), rhos=(0.0, 0.0)) -> EconomySpec:
    """One period, no uncertainty; ``eps0[i]``, ``eps1[i]`` are agent ``i``'s endowments."""
    tree = build_tree([1])
    agents = tuple(AgentSpec(g, r, [[e0], [e1]]) for g, r, e0, e1 in zip(gammas, rhos, eps0, eps1))
    return EconomySpec(tree, agents)


def _xy_residuals(lx, ly, economy):
    """Budget residuals with ``xi_0 = 1`` at weights ``(lambda_1, lambda_2) = (y, x)``.

    Vectorized over arrays of ``log x`` and ``log y``.
    """
    g, r = economy.gammas, economy.rhos
    e0 = np.array([float(e[0][0]) for e in economy.endowments])
    e1 = np.array([float(e[1][0]) for e in economy.endowments])
    lw = np.stack([ly, lx], axis=-1).reshape(-1, 2)
    lb1 = log_betas(lw, g, r, 1)
    lxi, _ = log_spd_rows(lb1, g, np.full(lw.shape[0], e1.sum()))
    lb0 = log_betas(lw, g, r, 0)
    c0 = np.maximum(lb0, 0.0) / g
    c1 = np.maximum(lb1 - lxi[:, None], 0.0) / g
    xi1 = np.exp(lxi)[:, None]
    res = c0 + xi1 * c1 - e0 - xi1 * e1
    return res.reshape(np.shape(lx) + (2,))


def nonuniqueness_scan(economy: EconomySpec, n: int = 241, span=(-10.0, 5.0),
                       tol: float = 1e-10) -> list[tuple[float, float]]:
    """All roots ``(x, y)`` of the two budget equations of a one-period
    deterministic two-agent economy, ``x`` and ``y`` being the weights of
    agents 2 and 1 with ``xi_0 = 1``.

    A dense grid in ``(log x, log y)`` covers all three regimes of ``xi_1``;
    every local minimum of the residual norm is refined by Newton and kept
    if the residual falls below ``tol``.
    """
    tree = economy.tree
    if economy.n_agents != 2 or tree.sizes != [1, 1]:
        raise ValueError("scan needs a one-period deterministic two-agent economy")
    ax = np.linspace(span[0], span[1], n)
    LX, LY = np.meshgrid(ax, ax, indexing="ij")
    R = np.linalg.norm(_xy_residuals(LX, LY, economy), axis=-1)
    pad = np.pad(R, 1, constant_values=np.inf)
    is_min = np.ones_like(R, bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_min &= R <= pad[1 + di:1 + di + n, 1 + dj:1 + dj + n]
    roots = []
    for i, j in zip(*np.nonzero(is_min)):
        def F(z):
            return _xy_residuals(np.array(z[0]), np.array(z[1]), economy).ravel()
        z, r = _newton(F, np.array([ax[i], ax[j]]), tol=1e-14)
        if np.max(np.abs(r)) > tol:
            continue
        x, y = float(np.exp(z[0])), float(np.exp(z[1]))
        if any(abs(x - a) <= 1e-6 * a and abs(y - b) <= 1e-6 * b for a, b in roots):
            continue
        roots.append((x, y))
    return sorted(roots)


def printed_equations(x, y, eps0, eps1):
    """Residuals of the two-agent budget equations in the closed form they
    are usually quoted in (unit risk aversion, no impatience), where in the
    regime ``x < y e^{-eps_1}`` agent 2's time-1 term is taken as
    ``-eps^2_1 e^{-eps_1} / x``.

    This form drops agent 2's own time-1 consumption from the budget; it is
    kept to reproduce the two-root construction and to contrast it with
    :func:`budget_residuals`.
    """
    E1 = eps1[0] + eps1[1]
    if x < y * math.exp(-E1):
        xi = math.exp(-E1) / x
        h = -eps1[0] * xi
        g = -eps1[1] * xi
    elif x <= y * math.exp(E1):
        xi = 1.0 / (math.sqrt(x * y) * math.exp(E1 / 2))
        h = xi * (math.log(math.sqrt(x) * math.exp(E1 / 2) / math.sqrt(y)) - eps1[0])
        g = xi * (math.log(math.sqrt(y) * math.exp(E1 / 2) / math.sqrt(x)) - eps1[1])
    else:
        h = (E1 - eps1[0]) / (y * math.exp(E1))
        g = (E1 - eps1[1]) / (y * math.exp(E1))
    r1 = (math.log(1 / y) if y <= 1 else 0.0) + h - eps0[0]
    r2 = (math.log(1 / x) if x <= 1 else 0.0) + g - eps0[1]
    return r1, r2


def two_root_construction(eps11: float = 0.3, eps21: float = 0.3, gap: float = 1e-3,
                          eps10: float = 0.01) -> dict:
    """Parameters and candidate roots of the two-equilibrium construction.

    With ``E1 = eps11 + eps21``, ``h(x) = log(1/x) - eps11 e^{-E1} / x``
    peaks at ``x_max = eps11 e^{-E1}``.  Setting ``eps20 = h(x_max) - gap``
    gives two roots ``x_1 < x_max < x_2`` of ``h = eps20`` and
    ``y_l = exp(-eps10 - eps11 e^{-E1} / x_l)``.
    """
    E1 = eps11 + eps21
    c = eps11 * math.exp(-E1)

    def h(x):
        return math.log(1 / x) - c / x

    x_max = c
    h_max = h(x_max)
    eps20 = h_max - gap
    x1 = brentq(lambda x: h(x) - eps20, x_max * 1e-3, x_max, xtol=1e-15, rtol=1e-15)
    x2 = brentq(lambda x: h(x) - eps20, x_max, x_max * 1e3, xtol=1e-15, rtol=1e-15)
    xs = (x1, x2)
    ys = tuple(math.exp(-eps10 - c / x) for x in xs)
    econ = two_agent_economy((eps10, eps20), (eps11, eps21))
    true_res = [_xy_residuals(np.log(x), np.log(y), econ).tolist() for x, y in zip(xs, ys)]
    return {
        "eps0": (eps10, eps20),
        "eps1": (eps11, eps21),
        "x_max": x_max,
        "h_max": h_max,
        "h_max_formula": math.log(math.exp(E1) / eps11) - 1.0,
        "hypotheses": {"eps11_below_1_over_e": eps11 < math.exp(-1),
                       "exp_2eps11_minus_1_above_eps11": math.exp(2 * eps11 - 1) > eps11},
        "roots": list(zip(xs, ys)),
        "in_regime": [x < y * math.exp(-E1) and eps21 * math.exp(-E1) < y * math.exp(-E1)
                      for x, y in zip(xs, ys)],
        "printed_residuals": [printed_equations(x, y, (eps10, eps20), (eps11, eps21))
                              for x, y in zip(xs, ys)],
        "budget_residuals": true_res,
        "economy": econ,
    }


# -- vanishing aggregate endowment --------------------------------------------

def vanishing_endowment_family(economy: EconomySpec, X, weights=None) -> EquilibriumSolution:
    """Equilibrium with the density set to ``X_k`` wherever ``eps_k = 0``.

    Elsewhere the density is the clearing candidate at ``weights``.  When
    ``weights`` is omitted it is solved from the budget equations (normalized
    to ``xi_0 = 1`` if ``eps_0 > 0``).  ``X`` must be non-negative on the
    zero-endowment nodes; it is admissible when ``X_k >= max_i beta_i(k)``
    there, so that no agent demands a positive amount; the result records
    this in ``admissible``.
    """
    tree = economy.tree
    X = tree.process(X)
    agg = economy.aggregate
    zero = [e == 0 for e in agg]
    if any(np.any(X[k][z] < 0) for k, z in enumerate(zero)):
        raise ValueError("X must be non-negative on zero-endowment nodes")
    for a, e in zip(economy.agents, economy.endowments):
        if not any(np.any(x > 0) for x in e):
            raise ValueError("every agent needs a positive endowment somewhere")

    def density(w):
        cand = candidate_spd(w, economy)
        return [np.where(z, x, c) for z, x, c in zip(zero, X, cand)]

    scale_free = not zero[0][0]

    def weights_of(u):
        if scale_free:
            return _from_free(u, economy)
        return np.exp(u)

    if weights is None:
        start = np.array([a.gamma * math.exp(-a.gamma * float(e[0][0]))
                          for a, e in zip(economy.agents, economy.endowments)])
        u0 = np.log(start[:-1] / start[-1]) if scale_free else np.log(start)
        if u0.size:
            u, _ = _newton(lambda u: budget_residuals(weights_of(u), economy, density(weights_of(u))), u0)
        else:
            u = u0
        w = weights_of(u)
    else:
        w = _check_weights(weights, economy.n_agents)
        if scale_free:
            w = normalize_weights(w, economy)
    xi = density(w)
    sol = certify(economy, w, xi)
    adm = all(np.all(X[k][zero[k]] >= betas(w, economy.agents, k)[0].max() * (1 - 1e-12))
              for k in range(tree.horizon + 1))
    sol.admissible = bool(adm)
    return sol
