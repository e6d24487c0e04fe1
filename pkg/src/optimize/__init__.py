from src.optimize.admissible import discrete_V_norm, h1_norms, project_admissible, w_norms
from src.optimize.cost import CostBreakdown, eval_cost, tracking_cost
from src.optimize.descent import (
    DescentResult,
    OptimizeConfig,
    run_projected_gd,
    variation_inequality_check,
)
from src.optimize.fixed_point import (
    FixedPointResult,
    first_order_residual,
    fixed_point_iterate,
    optimality_update,
)
from src.optimize.gradient import (
    GradientField,
    assemble_gradient,
    fd_directional,
    gradient_check,
    random_direction,
    relative_error,
    sine_mode,
    sine_symbol,
    taylor_table,
    tracking_riesz,
)
from src.optimize.problem import ControlProblem, Evaluation

__all__ = [
    "ControlProblem",
    "CostBreakdown",
    "DescentResult",
    "Evaluation",
    "FixedPointResult",
    "GradientField",
    "OptimizeConfig",
    "assemble_gradient",
    "discrete_V_norm",
    "eval_cost",
    "fd_directional",
    "first_order_residual",
    "fixed_point_iterate",
    "gradient_check",
    "h1_norms",
    "optimality_update",
    "project_admissible",
    "random_direction",
    "relative_error",
    "run_projected_gd",
    "sine_mode",
    "sine_symbol",
    "taylor_table",
    "tracking_cost",
    "tracking_riesz",
    "variation_inequality_check",
    "w_norms",
]
