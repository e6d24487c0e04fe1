from src.sensitivity.costate import (
    CostateStore,
    StoreAlignmentError,
    check_alignment,
    resolve_cutoff,
    run_backward,
    run_backward_via_h,
    terminal_costate,
)
from src.sensitivity.tangent import TangentStore, run_tangent, tangent_pairing

__all__ = [
    "CostateStore",
    "StoreAlignmentError",
    "TangentStore",
    "check_alignment",
    "resolve_cutoff",
    "run_backward",
    "run_backward_via_h",
    "run_tangent",
    "tangent_pairing",
    "terminal_costate",
]
