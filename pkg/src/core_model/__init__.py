from src.core_model.bumps import (
    BumpSum,
    CompactBump,
    TargetDatum,
    eval_bump,
    eval_bump_grad,
)
from src.core_model.cutoff import CutoffSpec, eval_cutoff, eval_cutoff_grad
from src.core_model.phase_space import (
    AdmissibleSpec,
    FieldGrid,
    PhasePoint,
    RunConfig,
    as_phase_array,
)

__all__ = [
    "AdmissibleSpec",
    "BumpSum",
    "CompactBump",
    "CutoffSpec",
    "FieldGrid",
    "PhasePoint",
    "RunConfig",
    "TargetDatum",
    "as_phase_array",
    "eval_bump",
    "eval_bump_grad",
    "eval_cutoff",
    "eval_cutoff_grad",
]
