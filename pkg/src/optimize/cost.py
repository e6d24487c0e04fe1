"""Tracking cost functional J(B) = 1/2 ||f(T) - f_d||^2 + lambda/2 ||D_x B||^2."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.core_model.bumps import TargetDatum
from src.forward.control_field import ControlField
from src.forward.solver import TrajectoryStore
from src.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class CostBreakdown:
    total: float
    tracking: float
    regularization: float

    def as_dict(self) -> dict:
        return {
            "J": self.total,
            "tracking": self.tracking,
            "reg": self.regularization,
        }


def tracking_cost(
    traj: TrajectoryStore, f_d: TargetDatum, target_norm_sq: Optional[float] = None
) -> float:
    """1/2 (||f0||^2 - 2 sum_p omega_p f_d(z_p(T)) + ||f_d||^2), clipped at zero.

    The cross term is the transported particle quadrature of int f(T) f_d; the
    two squared norms are the conserved particle norm and the datum's own norm.
    """
    ens = traj.ensemble
    own = ens.l2_norm_squared()
    target = f_d.l2_norm_squared() if target_norm_sq is None else float(target_norm_sq)
    cross = float(np.dot(ens.weights, f_d.value(traj.final_states)))
    value = 0.5 * (own - 2.0 * cross + target)
    if value < 0.0:
        logger.debug(f"Tracking cost {value:.3e} below zero from quadrature error, clipped")
        value = 0.0
    return value


def eval_cost(
    traj: TrajectoryStore,
    B: ControlField,
    f_d: TargetDatum,
    lam: float,
    target_norm_sq: Optional[float] = None,
) -> CostBreakdown:
    """Evaluate the tracking and regularization parts of J on a finished run.

    Args:
        traj: Complete forward run driven by B
        B: The control
        f_d: Target datum
        lam: Regularization weight lambda >= 0
        target_norm_sq: Precomputed ||f_d||^2, computed from f_d when omitted

    Returns:
        The cost breakdown
    """
    if lam < 0:
        raise ValueError(f"run.lambda must be nonnegative, got {lam}")
    tracking = tracking_cost(traj, f_d, target_norm_sq)
    regularization = lam * B.gradient_energy() if lam > 0 else 0.0
    return CostBreakdown(
        total=tracking + regularization, tracking=tracking, regularization=regularization
    )
