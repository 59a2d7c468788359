"""Zero-coupon bond prices and yields when aggregate endowment is a random walk.

Aggregate endowment is ``eps_t = X_1 + ... + X_t`` with i.i.d. non-negative
increments of finite support, shared equally among the agents.  The
equilibrium density at ``t`` is a function of ``eps_t`` alone, so the bond
price ``B^t = E[xi_t] / xi_0`` is an exact finite sum over the distribution of
``eps_t``.  When the support lies on a lattice ``h Z`` this distribution is
obtained by repeated convolution, carried out in log space so that neither
tiny probabilities nor tiny prices underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .equilibrium import log_betas, log_spd_rows

MAX_LATTICE = 1_000_000
INF = math.inf
MC_TILT_FRACTION = 0.9


@dataclass(frozen=True, eq=False)
class IncrementLaw:
    """Finite-support law of the endowment increment ``X_1``."""

    support: tuple
    probs: tuple

    def __post_init__(self):
        x = np.asarray(self.support, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        if x.shape != p.shape or x.ndim != 1 or x.size == 0:
            raise ValueError("support and probs must be equal-length 1-D sequences")
        if np.any(x < 0):
            raise ValueError("increments must be non-negative")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be positive and sum to 1")
        if not float(p @ x) > 0:
            raise ValueError("increment mean must be positive")
        order = np.argsort(x)
        object.__setattr__(self, "support", tuple(x[order]))
        object.__setattr__(self, "probs", tuple(p[order]))

    @property
    def x(self) -> np.ndarray:
        return np.array(self.support)

    @property
    def p(self) -> np.ndarray:
        return np.array(self.probs)

    @property
    def mean(self) -> float:
        return float(self.p @ self.x)

    def lattice(self, max_den: int = 10_000):
        """Step ``h`` and integer multiples ``m`` with ``support = h m`` exactly."""
        fr = [Fraction(v).limit_denominator(max_den) for v in self.support]
        if any(abs(float(f) - v) > 1e-12 * max(1.0, v) for f, v in zip(fr, self.support)):
            raise ValueError("support does not lie on a rational lattice")
        den = math.lcm(*(f.denominator for f in fr))
        nums = [f.numerator * (den // f.denominator) for f in fr]
        g = math.gcd(*nums) or 1
        return g / den, np.array([n // g for n in nums], dtype=np.int64)


class RateFunction:
    """Log moment generating function of ``X_1`` and its Legendre transform."""

    def __init__(self, law: IncrementLaw):
        self.law = law
        self._x, self._lp = law.x, np.log(law.p)

    def logmgf(self, s):
        s = np.asarray(s, dtype=float)
        return logsumexp(np.multiply.outer(s, self._x) + self._lp, axis=-1)

    def _dlogmgf(self, s):
        w = np.exp(s * self._x + self._lp - self.logmgf(s))
        return float(w @ self._x)

    def legendre(self, y: float) -> float:
        """``sup_s (s y - logmgf(s))``; :data:`INF` outside the support hull."""
        lo, hi = self._x[0], self._x[-1]
        if y < lo or y > hi:
            return INF
        if y == lo:
            return -float(self._lp[0])
        if y == hi:
            return -float(self._lp[-1])
        # logmgf' increases from min to max support; bracket its root
        a, b = -1.0, 1.0
        while self._dlogmgf(a) > y:
            a *= 2.0
        while self._dlogmgf(b) < y:
            b *= 2.0
        s = brentq(lambda s: self._dlogmgf(s) - y, a, b, xtol=1e-14, rtol=1e-15)
        # one Newton step on the derivative for the last digits
        w = np.exp(s * self._x + self._lp - self.logmgf(s))
        var = float(w @ self._x ** 2) - float(w @ self._x) ** 2
        if var > 0:
            s -= (float(w @ self._x) - y) / var
        return float(max(s * y - self.logmgf(s), 0.0))

    def inf_over(self, a: float, b: float, closed: bool = True) -> float:
        """Infimum of the transform over ``[a, b]`` (or ``(a, b)``).

        The transform is convex with minimum 0 at the mean, so the infimum
        sits at the point of the interval nearest the mean.  For an open
        interval the value at an endpoint is the limit from inside, which is
        infinite when the interval lies outside the support hull there; a
        degenerate open interval ``a == b`` uses the value at ``a``.
        """
        if a > b:
            raise ValueError("empty interval")
        m = self.law.mean
        y = min(max(m, a), b)
        if closed or a == b or a < y < b:
            return self.legendre(y)
        lo, hi = self._x[0], self._x[-1]
        inside = (y == b and b > lo) or (y == a and a < hi)
        return self.legendre(min(max(y, lo), hi)) if inside else INF


def logmgf(law: IncrementLaw, s):
    return RateFunction(law).logmgf(s)


def legendre(rf: RateFunction, y: float) -> float:
    return rf.legendre(y)


@dataclass(frozen=True, eq=False)
class RandomWalkEconomy:
    """Agents sharing a random-walk aggregate endowment equally."""

    gammas: tuple
    rhos: tuple
    law: IncrementLaw

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gammas, dtype=float))
        r = np.atleast_1d(np.asarray(self.rhos, dtype=float))
        if r.size == 1 and g.size > 1:
            r = np.full(g.size, r[0])
        if g.shape != r.shape:
            raise ValueError("gammas and rhos must have the same length")
        if np.any(g <= 0) or np.any(r < 0):
            raise ValueError("need gamma > 0 and rho >= 0")
        object.__setattr__(self, "gammas", tuple(g))
        object.__setattr__(self, "rhos", tuple(r))

    @property
    def n_agents(self) -> int:
        return len(self.gammas)

    def log_spd(self, weights, t: int, eps) -> np.ndarray:
        g, r = np.array(self.gammas), np.array(self.rhos)
        lb = log_betas(np.log(weights), g, r, t)
        eps = np.atleast_1d(np.asarray(eps, dtype=float))
        return log_spd_rows(np.broadcast_to(lb, (eps.size, lb.size)), g, eps)[0]


def _weights(economy, weights):
    w = np.ones(economy.n_agents) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (economy.n_agents,) or np.any(w <= 0):
        raise ValueError("weights must be positive, one per agent")
    return w


def log_bond_prices(economy: RandomWalkEconomy, weights=None, t_max: int = 1) -> np.ndarray:
    """``log B^t`` for ``t = 1..t_max`` by exact lattice convolution."""
    w = _weights(economy, weights)
    h, m = economy.law.lattice()
    if int(m.max()) * t_max + 1 > MAX_LATTICE:
        raise MemoryError(f"lattice for t={t_max} exceeds {MAX_LATTICE} points")
    lp = np.log(economy.law.p)
    log_xi0 = float(economy.log_spd(w, 0, [0.0])[0])
    dist = np.array([0.0])  # log P(eps_t = n h)
    out = np.empty(t_max)
    for t in range(1, t_max + 1):
        new = np.full(dist.size + int(m.max()), -np.inf)
        for mi, lpi in zip(m, lp):
            seg = new[mi:mi + dist.size]
            new[mi:mi + dist.size] = np.logaddexp(seg, dist + lpi)
        dist = new
        n = np.flatnonzero(np.isfinite(dist))
        lx = economy.log_spd(w, t, n * h)
        out[t - 1] = logsumexp(dist[n] + lx) - log_xi0
    return out


def bond_price(economy: RandomWalkEconomy, weights=None, t: int = 1) -> float:
    """``B^t = E[xi_t] / xi_0``."""
    if t < 1:
        raise ValueError("maturity must be >= 1")
    return float(np.exp(log_bond_prices(economy, weights, t)[-1]))


def yield_(economy: RandomWalkEconomy, weights=None, t: int = 1) -> float:
    """``Y(0, t) = -log(B^t) / t``, computed from ``log B^t``."""
    if t < 1:
        raise ValueError("maturity must be >= 1")
    return float(-log_bond_prices(economy, weights, t)[-1] / t)


def yield_curve(economy: RandomWalkEconomy, weights=None, t_max: int = 1) -> np.ndarray:
    t = np.arange(1, t_max + 1)
    return -log_bond_prices(economy, weights, t_max) / t


def hetero_gamma_limit(gammas, rho: float, law: IncrementLaw) -> float:
    """Long-run yield ``rho - log E[exp(-X_1 / sum_l 1/gamma_l)]``."""
    s = float(np.sum(1.0 / np.asarray(gammas, dtype=float)))
    return float(rho - RateFunction(law).logmgf(-1.0 / s))


@dataclass
class YieldBounds:
    lower: float
    upper: float
    a: list
    b: list
    intervals: list


def yield_bounds(gamma: float, rhos, law: IncrementLaw) -> YieldBounds:
    """Large-deviation bounds on the long-run yield with heterogeneous impatience.

    ``rhos`` must be nonincreasing.  Agent ``j`` consumes alone at the margin
    while ``eps_t / t`` lies between ``lo_j = (1/gamma) sum_{l>j} (rho_j - rho_l)``
    and ``hi_j = (1/gamma) sum_{l>=j} (rho_{j-1} - rho_l)`` (``hi_1 = inf``);
    ``a_j = rho_j + inf_[lo_j, hi_j] L*`` and, for ``j >= 2``,
    ``b_j = rho_{j-1} + inf_(lo_j, hi_j) L*``.  Returns ``min a`` and
    ``min b`` (infinite for a single agent).
    """
    r = np.asarray(rhos, dtype=float)
    if np.any(np.diff(r) > 0):
        raise ValueError("impatience rates must be ordered rho_1 >= ... >= rho_N")
    rf = RateFunction(law)
    N = r.size
    a, b, iv = [], [], []
    for j in range(N):
        lo = float(np.sum(r[j] - r[j + 1:])) / gamma
        hi = INF if j == 0 else float(np.sum(r[j - 1] - r[j:])) / gamma
        iv.append((lo, hi))
        a.append(float(r[j] + rf.inf_over(lo, hi, closed=True)))
        if j > 0:
            b.append(float(r[j - 1] + rf.inf_over(lo, hi, closed=False)))
    lower, upper = min(a), (min(b) if b else INF)
    if lower > upper + 1e-12:
        raise ArithmeticError(f"lower bound {lower} exceeds upper bound {upper}")
    return YieldBounds(lower, upper, a, b, iv)


def ordering_threshold(weights, rhos) -> float:
    """Smallest ``t'`` with ``lambda_j e^{rho_j t} > lambda_{j+1} e^{rho_{j+1} t}``
    for all ``j`` and every integer ``t > t'`` (``inf`` if never)."""
    lw = np.log(np.asarray(weights, dtype=float))
    r = np.asarray(rhos, dtype=float)
    t_prime = 0
    for j in range(r.size - 1):
        dr = r[j] - r[j + 1]
        dl = lw[j + 1] - lw[j]
        if dr > 0:
            t_prime = max(t_prime, math.floor(dl / dr))
        elif dl >= 0:
            return INF
    return t_prime


def bond_price_mc(economy: RandomWalkEconomy, weights=None, t: int = 1,
                  n_paths: int = 1_000_000, seed: int = 0, tilt: float | None = None):
    """Monte-Carlo estimate of ``B^t`` with its standard error.

    ``eps_t`` is drawn through multinomial counts of the support points
    under the exponentially tilted law ``q_i ~ p_i e^{tilt x_i}`` and
    reweighted by the likelihood ratio.  The default tilt is
    :data:`MC_TILT_FRACTION` times ``-1 / sum_l 1/gamma_l``, the decay rate of
    the density in the regime where every agent consumes.  The full rate
    would make the estimator almost constant, so its standard error would
    miss the states where some agent is priced out; the fraction keeps a
    genuine spread.  ``tilt=0`` is plain Monte Carlo.
    """
    w = _weights(economy, weights)
    law = economy.law
    rf = RateFunction(law)
    if tilt is None:
        tilt = -MC_TILT_FRACTION / float(np.sum(1.0 / np.array(economy.gammas)))
    lq = np.log(law.p) + tilt * law.x - rf.logmgf(tilt)
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(t, np.exp(lq - logsumexp(lq)), size=n_paths)
    eps = counts @ law.x
    vals, inv = np.unique(eps, return_inverse=True)
    log_xi0 = float(economy.log_spd(w, 0, [0.0])[0])
    lv = economy.log_spd(w, t, vals) - log_xi0 - tilt * vals + t * float(rf.logmgf(tilt))
    logs = lv[inv.ravel()]
    shift = logs.max()
    y = np.exp(logs - shift)
    est = y.mean()
    se = y.std(ddof=1) / math.sqrt(n_paths)
    return float(est * math.exp(shift)), float(se * math.exp(shift))
