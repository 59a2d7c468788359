"""Exponential-utility consumption with non-negative consumption on finite trees."""

from .bonds import (IncrementLaw, RandomWalkEconomy, RateFunction, bond_price, bond_price_mc,
                    hetero_gamma_limit, ordering_threshold, yield_, yield_bounds, yield_curve)
from .complete import (AgentSpec, ConsumptionSolution, constrained_consumption,
                       positivity_certificate, psi, solve_lambda_star, solve_unconstrained)
from .equilibrium import (EconomySpec, EquilibriumSolution, candidate_spd, certify,
                          nonuniqueness_scan, solve_equilibrium, two_root_construction,
                          vanishing_endowment_family)
from .errors import ArbitrageError, ConvergenceError
from .incomplete import (KKTReport, KKTSolution, PortfolioStrategy, one_period_closed_form,
                         solve_kkt, verify_kkt)
from .market import (MarketSpec, aggregate_spd, complete_market, no_arbitrage, type_c_market,
                     verify_spd)
from .oracle import OracleResult, oracle_complete, oracle_incomplete
from .probtree import Tree, build_tree, cond_expect, ess_inf, random_tree
from .savings import (SavingsInstance, cond_variance, endowment_eps, eps0_threshold,
                      monotonicity_report, solve_c0_curve)

__version__ = "0.1.0"

__all__ = [
    "AgentSpec", "ArbitrageError", "ConsumptionSolution", "ConvergenceError", "EconomySpec",
    "EquilibriumSolution", "IncrementLaw", "KKTReport", "KKTSolution", "MarketSpec",
    "OracleResult", "PortfolioStrategy", "RandomWalkEconomy", "RateFunction", "SavingsInstance",
    "Tree", "aggregate_spd", "bond_price", "bond_price_mc", "build_tree", "candidate_spd",
    "certify", "complete_market", "cond_expect", "cond_variance", "constrained_consumption",
    "endowment_eps", "eps0_threshold", "ess_inf", "hetero_gamma_limit", "monotonicity_report", "no_arbitrage",
    "nonuniqueness_scan", "one_period_closed_form", "oracle_complete", "oracle_incomplete",
    "ordering_threshold", "positivity_certificate", "psi", "random_tree", "solve_c0_curve",
    "solve_equilibrium", "solve_kkt", "solve_lambda_star", "solve_unconstrained",
    "two_root_construction", "type_c_market", "vanishing_endowment_family", "verify_kkt",
    "verify_spd", "yield_", "yield_bounds", "yield_curve",
]
