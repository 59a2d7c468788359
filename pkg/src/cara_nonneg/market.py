"""Discrete-time securities markets on a :class:`~cara_nonneg.probtree.Tree`.

A market is stored period by period: in period ``k`` (``k = 1..T``) a set of
securities can be bought at level ``k-1`` for ``price[k]`` and pays
``payoff[k]`` at level ``k``, next to a riskless bond paying ``1 + r_k``.
Price processes ``S^j_k`` map onto this by ``payoff = S_k`` and
``price = S_{k-1}`` (see :meth:`MarketSpec.from_assets`); the one-period form
also admits Arrow-type securities that expire.

The wealth space ``L_k`` is the set of level-``k`` payoffs attainable from an
``F_{k-1}``-measurable portfolio.  Markets "of type C" declare
``L_k = L^2(H_k)`` through a partition of level ``k``; the declaration is
checked against the span of the traded payoffs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import ArbitrageError
from .probtree import Tree, block_labels, refines_parents

RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MarketSpec:
    tree: Tree
    payoffs: tuple
    prices: tuple
    rate: tuple
    wealth_spaces: tuple = ()
    _local_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        tree = self.tree
        T = tree.horizon
        if not (len(self.payoffs) == len(self.prices) == len(self.rate) == T):
            raise ValueError("payoffs, prices and rate need one entry per period 1..T")
        payoffs, prices, rate = [], [], []
        for k in range(1, T + 1):
            pay = np.asarray(self.payoffs[k - 1], dtype=float).reshape(tree.sizes[k], -1)
            pr = np.asarray(self.prices[k - 1], dtype=float).reshape(tree.sizes[k - 1], -1)
            r = np.atleast_1d(np.asarray(self.rate[k - 1], dtype=float))
            if pay.shape[1] != pr.shape[1]:
                raise ValueError(f"period {k}: payoff and price columns differ")
            if r.shape != (tree.sizes[k - 1],):
                raise ValueError(f"period {k}: rate must be F_{k - 1}-measurable "
                                 f"({tree.sizes[k - 1]} values)")
            if np.any(pay < 0) or np.any(pr < 0):
                raise ValueError(f"period {k}: asset prices must be non-negative")
            if np.any(1.0 + r <= 0):
                raise ValueError(f"period {k}: bond gross return 1 + r must be positive")
            payoffs.append(pay)
            prices.append(pr)
            rate.append(r)
        object.__setattr__(self, "payoffs", tuple(payoffs))
        object.__setattr__(self, "prices", tuple(prices))
        object.__setattr__(self, "rate", tuple(rate))

        spaces = list(self.wealth_spaces) or [None] * T
        if len(spaces) != T:
            raise ValueError("wealth_spaces needs one entry per period 1..T")
        for k in range(1, T + 1):
            if spaces[k - 1] is None:
                continue
            lab = block_labels(spaces[k - 1], tree.sizes[k])
            if not refines_parents(tree, k, lab):
                raise ValueError(f"period {k}: H_{k} must contain F_{k - 1}")
            spaces[k - 1] = lab
        object.__setattr__(self, "wealth_spaces", tuple(spaces))
        for k in range(1, T + 1):
            if spaces[k - 1] is not None:
                self._check_type_c(k)

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_assets(cls, tree: Tree, assets, rate, wealth_spaces=()):
        """Market with ``n`` price processes ``S^j`` (each a list over levels)."""
        assets = [tree.process(S) for S in assets]
        payoffs = [np.column_stack([S[k] for S in assets]) if assets
                   else np.zeros((tree.sizes[k], 0)) for k in range(1, tree.horizon + 1)]
        prices = [np.column_stack([S[k - 1] for S in assets]) if assets
                  else np.zeros((tree.sizes[k - 1], 0)) for k in range(1, tree.horizon + 1)]
        return cls(tree, tuple(payoffs), tuple(prices), tuple(rate), tuple(wealth_spaces))

    # -- local one-period structure ---------------------------------------

    @property
    def is_type_c(self) -> bool:
        return all(s is not None for s in self.wealth_spaces)

    def local(self, k: int, parent: int):
        """Children, payoff matrix (bond last) and price vector at ``parent``."""
        key = ("local", k, parent)
        if key not in self._local_cache:
            ch = self.tree.children(k - 1, parent)
            bond = np.full((len(ch), 1), 1.0 + self.rate[k - 1][parent])
            pay = np.hstack([self.payoffs[k - 1][ch], bond])
            price = np.append(self.prices[k - 1][parent], 1.0)
            self._local_cache[key] = (ch, pay, price)
        return self._local_cache[key]

    def _check_type_c(self, k):
        lab = self.wealth_spaces[k - 1]
        for p in range(self.tree.sizes[k - 1]):
            ch, pay, _ = self.local(k, p)
            ind = (lab[ch][:, None] == np.unique(lab[ch])[None, :]).astype(float)
            r_pay = _rank(pay)
            if r_pay != ind.shape[1] or _rank(np.hstack([pay, ind])) != r_pay:
                raise ValueError(
                    f"period {k}, node {p}: declared H_{k} blocks do not match the "
                    "span of traded payoffs")

    def wealth_basis(self, k: int):
        """Basis of ``L_k`` with parent-local columns.

        Returns
        -------
        basis : ndarray, shape (n_k, d_k)
        col_parent : ndarray, shape (d_k,)
            Level ``k-1`` node at which each column is traded.
        col_cost : ndarray, shape (d_k,)
            Price at that node of the portfolio paying the column.
        """
        key = ("basis", k)
        if key in self._local_cache:
            return self._local_cache[key]
        n_k = self.tree.sizes[k]
        cols, parents, costs = [], [], []
        lab = self.wealth_spaces[k - 1]
        for p in range(self.tree.sizes[k - 1]):
            ch, pay, price = self.local(k, p)
            if lab is None:
                u, s, vt = np.linalg.svd(pay, full_matrices=False)
                r = int(np.sum(s > RANK_TOL * s[0]))
                local_cols = u[:, :r]
                local_cost = (vt[:r] @ price) / s[:r]
            else:
                blocks = np.unique(lab[ch])
                local_cols = (lab[ch][:, None] == blocks[None, :]).astype(float)
                coef = np.linalg.lstsq(pay, local_cols, rcond=None)[0]
                local_cost = price @ coef
            for j in range(local_cols.shape[1]):
                col = np.zeros(n_k)
                col[ch] = local_cols[:, j]
                cols.append(col)
                parents.append(p)
                costs.append(local_cost[j])
        out = (np.column_stack(cols) if cols else np.zeros((n_k, 0)),
               np.asarray(parents, dtype=int), np.asarray(costs, dtype=float))
        self._local_cache[key] = out
        return out

    def replicate(self, k: int, wealth) -> tuple[np.ndarray, np.ndarray]:
        """Minimum-norm ``(pi, phi)`` held over period ``k`` that pays ``wealth``.

        ``pi`` has shape ``(n_{k-1}, m_k)`` and ``phi`` shape ``(n_{k-1},)``.
        """
        wealth = np.asarray(wealth, dtype=float)
        m = self.payoffs[k - 1].shape[1]
        pi = np.zeros((self.tree.sizes[k - 1], m))
        phi = np.zeros(self.tree.sizes[k - 1])
        for p in range(self.tree.sizes[k - 1]):
            ch, pay, _ = self.local(k, p)
            a = np.linalg.lstsq(pay, wealth[ch], rcond=None)[0]
            pi[p], phi[p] = a[:m], a[m]
        return pi, phi

    def project(self, k: int, x) -> np.ndarray:
        """Orthogonal projection in ``L^2(F_k)`` of a level-``k`` array onto ``L_k``."""
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        B, col_parent, _ = self.wealth_basis(k)
        w = np.sqrt(self.tree.probs[k])
        for p in range(self.tree.sizes[k - 1]):
            ch = self.tree.children(k - 1, p)
            Bp = B[np.ix_(ch, np.flatnonzero(col_parent == p))]
            a = np.linalg.lstsq(w[ch, None] * Bp, w[ch] * x[ch], rcond=None)[0]
            out[ch] = Bp @ a
        return out

    def to_dict(self) -> dict:
        return {
            "periods": [{"payoff": self.payoffs[k].tolist(), "price": self.prices[k].tolist()}
                        for k in range(self.tree.horizon)],
            "rate": [r.tolist() for r in self.rate],
            "wealth_spaces": [None if s is None else s.tolist() for s in self.wealth_spaces],
        }


def _rank(a) -> int:
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(s > RANK_TOL * max(s[0], 1.0)))


def implied_rate(tree: Tree, xi) -> list[np.ndarray]:
    """Short rate ``r_k`` with ``xi_{k-1} = E[xi_k (1 + r_k) | F_{k-1}]``."""
    xi = tree.process(xi)
    return [xi[k - 1] / tree.cond_parent(xi[k], k) - 1.0 for k in range(1, tree.horizon + 1)]


def complete_market(tree: Tree, xi) -> MarketSpec:
    """Complete market of one-period Arrow securities priced by ``xi``."""
    xi = tree.process(xi)
    payoffs, prices = [], []
    for k in range(1, tree.horizon + 1):
        par = tree.parents[k - 1]
        slot = np.arange(len(par)) - np.searchsorted(par, par)
        m = int(slot.max()) + 1
        pay = np.zeros((len(par), m))
        pay[np.arange(len(par)), slot] = 1.0
        price = np.zeros((tree.sizes[k - 1], m))
        price[par, slot] = tree.cond_probs(k) * xi[k] / xi[k - 1][par]
        payoffs.append(pay)
        prices.append(price)
    return MarketSpec(tree, tuple(payoffs), tuple(prices), tuple(implied_rate(tree, xi)))


def type_c_market(tree: Tree, partitions, M) -> MarketSpec:
    """Type-C market whose period-``k`` securities are indicators of ``H_k`` blocks.

    ``M`` must be ``H_k``-measurable on every level; it is then the aggregate
    state price density of the market built here.
    """
    M = tree.process(M)
    payoffs, prices, spaces = [], [], []
    for k in range(1, tree.horizon + 1):
        lab = block_labels(partitions[k - 1], tree.sizes[k])
        if not refines_parents(tree, k, lab):
            raise ValueError(f"period {k}: H_{k} must contain F_{k - 1}")
        mean = np.bincount(lab, weights=tree.probs[k] * M[k]) / np.bincount(lab, weights=tree.probs[k])
        if np.max(np.abs(mean[lab] - M[k])) > 1e-12 * max(1.0, np.abs(M[k]).max()):
            raise ValueError(f"M_{k} is not H_{k}-measurable")
        par = tree.parents[k - 1]
        slot = np.zeros(len(lab), dtype=int)
        for p in range(tree.sizes[k - 1]):
            ch = np.flatnonzero(par == p)
            inv = np.unique(lab[ch], return_inverse=True)[1]
            slot[ch] = inv.ravel()
        m = int(slot.max()) + 1
        pay = np.zeros((len(lab), m))
        pay[np.arange(len(lab)), slot] = 1.0
        price = np.zeros((tree.sizes[k - 1], m))
        np.add.at(price, (par, slot), tree.cond_probs(k) * M[k] / M[k - 1][par])
        payoffs.append(pay)
        prices.append(price)
        spaces.append(lab)
    return MarketSpec(tree, tuple(payoffs), tuple(prices), tuple(implied_rate(tree, M)),
                      tuple(spaces))


def market_from_dict(tree: Tree, cfg: dict) -> MarketSpec:
    """Build a market from its JSON form (see the README for the schema)."""
    spaces = cfg.get("wealth_spaces") or ()
    if "assets" in cfg:
        return MarketSpec.from_assets(tree, cfg["assets"], cfg["rate"], spaces)
    if "periods" in cfg:
        return MarketSpec(tree, tuple(p["payoff"] for p in cfg["periods"]),
                          tuple(p["price"] for p in cfg["periods"]),
                          tuple(cfg["rate"]), tuple(spaces))
    if "type_c" in cfg:
        return type_c_market(tree, cfg["type_c"]["partitions"], cfg["type_c"]["spd"])
    if "spd" in cfg:
        return complete_market(tree, cfg["spd"])
    raise ValueError("market needs one of 'assets', 'periods', 'type_c' or 'spd'")


# -- state price densities --------------------------------------------------

@dataclass
class SPDReport:
    max_residual: float
    location: tuple | None
    normalization: float
    min_value: float
    tol: float

    @property
    def passed(self) -> bool:
        return (self.max_residual <= self.tol and self.normalization <= self.tol
                and self.min_value > 0)


def verify_spd(m: MarketSpec, xi, tol: float = 1e-10) -> SPDReport:
    """Check ``S_{k-1} xi_{k-1} = E[S_k xi_k | F_{k-1}]`` for all securities.

    ``location`` is ``(k, parent, column)`` of the largest residual; the bond
    is the last column.
    """
    tree = m.tree
    try:
        xi = tree.process(xi)
    except ValueError as exc:
        raise ValueError(f"SPD does not match the tree: {exc}") from None
    worst, loc = 0.0, None
    for k in range(1, tree.horizon + 1):
        for p in range(tree.sizes[k - 1]):
            ch, pay, price = m.local(k, p)
            cp = tree.probs[k][ch] / tree.probs[k - 1][p]
            res = np.abs((cp * xi[k][ch]) @ pay - price * xi[k - 1][p])
            j = int(np.argmax(res))
            if res[j] > worst:
                worst, loc = float(res[j]), (k, p, j)
    return SPDReport(worst, loc, abs(float(xi[0][0]) - 1.0),
                     float(min(x.min() for x in xi)), tol)


def no_arbitrage(m: MarketSpec) -> tuple[bool, list[np.ndarray] | None]:
    """Look for a strictly positive SPD by linear programming.

    Maximizes ``t`` subject to ``xi >= t`` on every node, ``xi_0 = 1`` and
    the pricing identities; the market is free of arbitrage iff ``t > 0``.
    """
    tree = m.tree
    n = tree.n_nodes
    off = tree.offsets()
    rows, rhs = [], []
    e0 = np.zeros(n + 1)
    e0[0] = 1.0
    rows.append(e0)
    rhs.append(1.0)
    for k in range(1, tree.horizon + 1):
        for p in range(tree.sizes[k - 1]):
            ch, pay, price = m.local(k, p)
            for j in range(pay.shape[1]):
                row = np.zeros(n + 1)
                row[off[k] + ch] = tree.probs[k][ch] * pay[:, j]
                row[off[k - 1] + p] -= tree.probs[k - 1][p] * price[j]
                rows.append(row)
                rhs.append(0.0)
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    bounds = [(0, None)] * n + [(None, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=np.array(rows), b_eq=np.array(rhs),
                  bounds=bounds, method="highs")
    if res.status != 0 or -res.fun <= 1e-9:
        return False, None
    return True, tree.unflatten(res.x[:n])


def aggregate_spd(m: MarketSpec, require_positive: bool = True) -> list[np.ndarray]:
    """The unique normalized SPD with ``M_k`` in the wealth space ``L_k``.

    Solved period by period as a linear system in the coordinates of ``M_k``
    on the basis of ``L_k``; uniqueness is certified by a rank check.
    """
    ok, _ = no_arbitrage(m)
    if not ok:
        raise ArbitrageError("market admits arbitrage: no strictly positive SPD")
    tree = m.tree
    M = [np.ones(1)]
    for k in range(1, tree.horizon + 1):
        B, col_parent, _ = m.wealth_basis(k)
        Mk = np.zeros(tree.sizes[k])
        for p in range(tree.sizes[k - 1]):
            ch, pay, price = m.local(k, p)
            cols = np.flatnonzero(col_parent == p)
            Bp = B[np.ix_(ch, cols)]
            cp = tree.probs[k][ch] / tree.probs[k - 1][p]
            G = pay.T @ (cp[:, None] * Bp)
            b = price * M[k - 1][p]
            theta, *_ = np.linalg.lstsq(G, b, rcond=None)
            if _rank(G) != len(cols):
                raise ValueError(f"aggregate SPD not unique at period {k}, node {p}")
            if np.max(np.abs(G @ theta - b)) > 1e-10 * max(1.0, np.abs(b).max()):
                raise ValueError(f"no SPD in the wealth space at period {k}, node {p}")
            Mk[ch] = Bp @ theta
        M.append(Mk)
    if require_positive and min(x.min() for x in M) <= 0:
        raise ValueError("aggregate SPD is not strictly positive")
    return M


# -- random instances ---------------------------------------------------------

def random_spd(rng: np.random.Generator, tree: Tree, scale: float = 0.7) -> list[np.ndarray]:
    """Log-normal node values with ``xi_0 = 1``."""
    return [np.ones(1)] + [np.exp(rng.normal(0.0, scale, n)) for n in tree.sizes[1:]]


def random_incomplete_market(rng: np.random.Generator, tree: Tree,
                             n_assets: int = 1) -> MarketSpec:
    """One-period securities with random payoffs priced by a random SPD.

    With fewer securities than branches the market is incomplete; it is
    free of arbitrage by construction.
    """
    xi = random_spd(rng, tree)
    payoffs, prices = [], []
    for k in range(1, tree.horizon + 1):
        pay = rng.uniform(0.0, 2.0, (tree.sizes[k], n_assets))
        par = tree.parents[k - 1]
        w = (tree.cond_probs(k) * xi[k] / xi[k - 1][par])[:, None] * pay
        price = np.zeros((tree.sizes[k - 1], n_assets))
        np.add.at(price, par, w)
        payoffs.append(pay)
        prices.append(price)
    return MarketSpec(tree, tuple(payoffs), tuple(prices), tuple(implied_rate(tree, xi)))


def random_partition(rng: np.random.Generator, tree: Tree, k: int) -> np.ndarray:
    """Random ``H_k`` partition of level ``k`` that refines the parents."""
    par = tree.parents[k - 1]
    lab = np.empty(tree.sizes[k], dtype=int)
    nxt = 0
    for p in range(tree.sizes[k - 1]):
        ch = np.flatnonzero(par == p)
        nb = int(rng.integers(1, len(ch) + 1))
        cut = rng.integers(0, nb, len(ch))
        cut[:nb] = np.arange(nb)
        lab[ch] = nxt + cut
        nxt += nb
    return lab


def random_type_c_market(rng: np.random.Generator, tree: Tree) -> MarketSpec:
    """Type-C market with random partitions and a random ``H``-measurable ``M``."""
    parts = [random_partition(rng, tree, k) for k in range(1, tree.horizon + 1)]
    M = [np.ones(1)] + [np.exp(rng.normal(0.0, 0.5, lab.max() + 1))[lab] for lab in parts]
    return type_c_market(tree, parts, M)
