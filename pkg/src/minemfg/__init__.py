"""Mean-field game solver for the hash-rate competition between miners."""
__version__ = "0.1.0"

from .core import (
    ActionGrid,
    DistributionFlow,
    GridError,
    HashRateFlow,
    MassLeakError,
    OptimizerConfig,
    PolicyTable,
    TimeGrid,
    ValueTable,
    WealthGrid,
    backward_induction,
    bellman_step,
    consistency_residual,
    evaluate_policy,
    interp_value,
    kolmogorov_forward,
)
from .equilibrium import (
    EquilibriumResult,
    Game,
    NonConvergence,
    SolverConfig,
    best_response_value_gap,
    fixed_point_step,
    solve,
)
from .model import (
    DiscreteControlMeasure,
    ModelParams,
    UtilitySpec,
    jump_probability,
    lambda_eps,
    project_truncated_normal,
    step_destinations,
    utility_eval,
)

__all__ = [
    "ActionGrid", "DistributionFlow", "GridError", "HashRateFlow", "MassLeakError", "OptimizerConfig",
    "PolicyTable", "TimeGrid", "ValueTable", "WealthGrid", "backward_induction", "bellman_step",
    "consistency_residual", "evaluate_policy", "interp_value", "kolmogorov_forward",
    "EquilibriumResult", "Game", "NonConvergence", "SolverConfig", "best_response_value_gap",
    "fixed_point_step", "solve",
    "DiscreteControlMeasure", "ModelParams", "UtilitySpec", "jump_probability", "lambda_eps",
    "project_truncated_normal", "step_destinations", "utility_eval",
]
