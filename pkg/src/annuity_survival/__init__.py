"""Survival probability of an annuity surplus process with investment.

Finite-difference solution of the integro-differential boundary value
problem, Monte Carlo simulation of the surplus, and validation checks.
"""

from .model import (Empirical, Exponential, Gamma, JumpDistribution, ModelError, ModelParams,
                    gamma, make_empirical, make_exponential, make_gamma)
from .operator import (DiscreteOperator, Grid, GridFunction, apply, assemble, extend_grid,
                       make_grid, reference_apply)
from .simulator import (SimConfig, SurvivalEstimate, dpp_gap, estimate_survival,
                        hitting_time_jumpfree, lemma1_upper_bound, simulate_path)
from .solver import (GridSpec, Solution, SolverConfig, SolverError, local_resolvent,
                     solve_adaptive, solve_direct, solve_picard)

__version__ = "0.1.0"

__all__ = [
    "DiscreteOperator", "Empirical", "Exponential", "Gamma", "Grid", "GridFunction", "GridSpec",
    "JumpDistribution", "ModelError", "ModelParams", "SimConfig", "Solution", "SolverConfig",
    "SolverError", "SurvivalEstimate", "apply", "assemble", "dpp_gap", "estimate_survival",
    "extend_grid", "gamma", "hitting_time_jumpfree", "lemma1_upper_bound", "local_resolvent",
    "make_empirical", "make_exponential", "make_gamma", "make_grid", "reference_apply",
    "simulate_path", "solve_adaptive", "solve_direct", "solve_picard",
]
