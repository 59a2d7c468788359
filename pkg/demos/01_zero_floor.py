"""Where the zero-consumption floor starts to bind.

A two-period tree with a skewed state price density.  The unconstrained
CARA optimum goes negative in the expensive states; the constrained one
clips them to zero and pays for it with a higher multiplier.
"""
import numpy as np

from cara_nonneg import AgentSpec, build_tree, constrained_consumption, solve_unconstrained
from cara_nonneg.oracle import oracle_complete

tree = build_tree([2, 2], [[0.5, 0.5], [0.6, 0.4, 0.3, 0.7]])
xi = [np.ones(1), np.array([0.6, 1.5]), np.array([0.3, 0.9, 1.2, 4.0])]
agent = AgentSpec(gamma=2.0, rho=0.05, endowment=([0.2], [0.1, 0.0], [0.0, 0.3, 0.0, 0.0]))

free = solve_unconstrained(tree, agent, xi)
tight = constrained_consumption(tree, agent, xi)
check = oracle_complete(tree, agent, xi)

for k in range(tree.horizon + 1):
    print(f"t={k}  unconstrained {np.round(free.consumption[k], 4)}")
    print(f"      constrained   {np.round(tight.consumption[k], 4)}")
print(f"multiplier: unconstrained {free.multiplier:.6f}, constrained {tight.multiplier:.6f}")
gap = max(np.abs(a - b).max() for a, b in zip(tight.consumption, check.consumption))
print(f"largest gap to the brute-force oracle: {gap:.2e}")
