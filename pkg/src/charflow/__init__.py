from src.charflow.characteristics import (
    FieldProviders,
    FlowIntegrationError,
    FlowState,
    assemble_system_matrix,
    char_rhs,
    discrete_l2_linf_norm,
    first_non_finite,
    integrate_flow,
    rk4_step,
    step_count,
    support_bound_zeta,
    system_matrix,
    variational_rhs,
)

__all__ = [
    "FieldProviders",
    "FlowIntegrationError",
    "FlowState",
    "assemble_system_matrix",
    "char_rhs",
    "discrete_l2_linf_norm",
    "first_non_finite",
    "integrate_flow",
    "rk4_step",
    "step_count",
    "support_bound_zeta",
    "system_matrix",
    "variational_rhs",
]
