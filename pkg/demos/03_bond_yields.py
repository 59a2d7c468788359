"""Long-run yields in a random-walk endowment economy.

Two agents share an i.i.d. increment law.  With different risk aversion the
yield curve flattens to a limit set by the harmonic aggregate; with different
impatience it stays inside the rate-function band.
"""
import numpy as np

from cara_nonneg import (IncrementLaw, RandomWalkEconomy, hetero_gamma_limit, yield_bounds,
                         yield_curve)

law = IncrementLaw((0.0, 2.0), (0.5, 0.5))
econ = RandomWalkEconomy((1.0, 2.0), (0.05, 0.05), law)
Y = yield_curve(econ, None, 400)
lim = hetero_gamma_limit((1.0, 2.0), 0.05, law)
for t in (1, 10, 50, 100, 200, 400):
    print(f"Y(0,{t:3d}) = {Y[t - 1]:.6f}   gap to limit {Y[t - 1] - lim:+.2e}")

law2 = IncrementLaw((0.0, 1.0), (0.5, 0.5))
b = yield_bounds(1.0, (0.2, 0.1), law2)
Y2 = yield_curve(RandomWalkEconomy((1.0, 1.0), (0.2, 0.1), law2), None, 400)
print(f"\nimpatience band [{b.lower:.4f}, {b.upper:.4f}], "
      f"yields for t >= 200 in [{Y2[199:].min():.4f}, {Y2[199:].max():.4f}]")
print("long end of the curve:", np.round(Y2[[199, 299, 399]], 6))
