import math

from .errors import ConvergenceError


def solve_decreasing(fun, target, x0=1.0, rtol=1e-12, max_expand=200):
    """Solve ``fun(x) = target`` for ``x > 0`` with ``fun`` nonincreasing.

    The root is bracketed by doubling/halving ``x`` from ``x0`` and then
    bisected in ``log x`` down to relative width ``rtol``.  A final
    regula-falsi pass polishes the root; it is exact once the bracket lies on
    one linear piece of ``fun(exp(s))``, which is the case for every budget
    function in this package.
    """
    s = math.log(x0)
    f = fun(math.exp(s)) - target
    if f == 0:
        return math.exp(s)
    step = 1.0 if f > 0 else -1.0
    for _ in range(max_expand):
        s_new = s + step
        f_new = fun(math.exp(s_new)) - target
        if (f_new <= 0) if step > 0 else (f_new > 0):
            break
        s, f = s_new, f_new
        step *= 2.0
    else:
        raise ConvergenceError("could not bracket root", {"x": math.exp(s), "residual": f})
    lo, hi = (s, s_new) if step > 0 else (s_new, s)
    f_lo, f_hi = (f, f_new) if step > 0 else (f_new, f)
    while hi - lo > rtol:
        mid = 0.5 * (lo + hi)
        f_mid = fun(math.exp(mid)) - target
        if f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
        if f_mid == 0:
            return math.exp(mid)
    best, f_best = (lo, f_lo) if abs(f_lo) < abs(f_hi) else (hi, f_hi)
    for _ in range(8):
        if f_lo == f_hi:
            break
        cand = lo - f_lo * (hi - lo) / (f_hi - f_lo)
        if not lo <= cand <= hi:
            break
        f_c = fun(math.exp(cand)) - target
        if abs(f_c) < abs(f_best):
            best, f_best = cand, f_c
        if f_c == 0:
            break
        if f_c > 0:
            lo, f_lo = cand, f_c
        else:
            hi, f_hi = cand, f_c
    return math.exp(best)
