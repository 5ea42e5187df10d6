"""Optimal trading with a peek-ahead price window under quadratic impact
costs: closed-form policies and values, Monte Carlo verification, and a
discretized dual oracle.
"""

from .params import ModelParams, ReducedParams, REFERENCE_PARAMS, rho
from .kernels import KernelSet
from .market_sim import (GridError, PathEnsemble, StrategyTrace,
                         lookahead_view, pnl, refine, simulate)
from .policy import (PolicyInputs, feedback_rate, feedback_rate_terms,
                     initial_rate_closed_form, open_loop_rate, run_policy,
                     s_bar, urgency)
from .analytics import (MCEstimate, ValueReport, certainty_equivalent,
                        dual_value, dual_value_mapped, duality_gap,
                        mc_expected_utility, perturbation_test, primal_value,
                        value_report)
from .dual_oracle import (DualControl, ScenarioTree, dual_functional,
                          dual_value_assembly, minimize_a, minimize_l,
                          minimize_xi, tree_primal_max, xi_functional)

__version__ = "0.1.0"

__all__ = [
    "ModelParams", "ReducedParams", "REFERENCE_PARAMS", "rho",
    "KernelSet",
    "GridError", "PathEnsemble", "StrategyTrace", "lookahead_view", "pnl",
    "refine", "simulate",
    "PolicyInputs", "feedback_rate", "feedback_rate_terms",
    "initial_rate_closed_form", "open_loop_rate", "run_policy", "s_bar",
    "urgency",
    "MCEstimate", "ValueReport", "certainty_equivalent", "dual_value",
    "dual_value_mapped", "duality_gap", "mc_expected_utility",
    "perturbation_test", "primal_value", "value_report",
    "DualControl", "ScenarioTree", "dual_functional", "dual_value_assembly",
    "minimize_a", "minimize_l", "minimize_xi", "tree_primal_max",
    "xi_functional",
    "__version__",
]
