"""Present consumption against un-insurable income risk.

Time-1 income is exp(eX) renormalised to conditional mean one, so raising e
spreads it out without moving its hedgeable part.  c_0 falls as e rises.
"""
import numpy as np

from cara_nonneg.savings import monotonicity_report, random_instance, solve_c0_curve

inst = random_instance(np.random.default_rng(7))
curve = solve_c0_curve(inst)
for p in curve[::4]:
    print(f"e={p.eps:.2f}  c0={p.c0:.8f}  dc0/de={p.derivative:+.3e}  "
          f"var={np.round(p.variance, 4)}  solver gap {p.kkt_gap:.1e}")
print(monotonicity_report(curve).as_dict())
