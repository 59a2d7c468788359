"""Equilibria of small pure-exchange economies.

First a three-agent economy with heterogeneous risk aversion, solved from a
grid of starting weights.  Then the single-agent economy with zero initial
endowment, where every weight above one supports an equilibrium.
"""
import numpy as np

from cara_nonneg import AgentSpec, EconomySpec, build_tree, solve_equilibrium
from cara_nonneg.equilibrium import vanishing_endowment_family

tree = build_tree([3], [[0.3, 0.3, 0.4]])
agents = (AgentSpec(0.7, 0.02, ([0.4], [0.2, 0.5, 1.0])),
          AgentSpec(1.5, 0.05, ([0.3], [0.6, 0.2, 0.1])),
          AgentSpec(3.0, 0.01, ([0.1], [0.3, 0.4, 0.2])))
for sol in solve_equilibrium(EconomySpec(tree, agents)):
    print("weights", np.round(sol.weights, 6))
    print("xi_1   ", np.round(sol.spd[1], 6))
    print("largest residual", f"{sol.max_residual():.1e}")

two = build_tree([2], [[0.4, 0.6]])
eps1 = np.array([0.5, 1.2])
lonely = EconomySpec(two, (AgentSpec(1.0, 0.0, ([0.0], eps1)),))
print("\nzero initial endowment, one agent:")
for lam in (0.8, 1.0, 2.0, 10.0):
    s = vanishing_endowment_family(lonely, [[1.0], [9.0, 9.0]], weights=[lam])
    print(f"  weight {lam:5.1f}: xi_1 = {np.round(s.spd[1], 4)}  admissible {s.admissible}")
