from src.forward.control_field import ControlField
from src.forward.diagnostics import (
    TransportedTarget,
    determinant_deviation,
    flow_diagnostics_frame,
    inverse_identity_deviation,
    lipschitz_study,
    reconstructed_l2_norm,
)
from src.forward.ensemble import (
    EmptyEnsembleError,
    ParticleEnsemble,
    lp_norm,
    sample_ensemble,
)
from src.forward.solver import (
    PicardConvergenceError,
    SelfConsistentField,
    TrajectoryStore,
    run_forward,
    run_forward_picard,
    self_consistent_field,
    support_radius,
)

__all__ = [
    "ControlField",
    "EmptyEnsembleError",
    "ParticleEnsemble",
    "PicardConvergenceError",
    "SelfConsistentField",
    "TrajectoryStore",
    "TransportedTarget",
    "determinant_deviation",
    "flow_diagnostics_frame",
    "inverse_identity_deviation",
    "lipschitz_study",
    "lp_norm",
    "reconstructed_l2_norm",
    "run_forward",
    "run_forward_picard",
    "sample_ensemble",
    "self_consistent_field",
    "support_radius",
]
