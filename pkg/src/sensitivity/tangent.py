"""Linearized state transport: the directional derivative of f in a control direction H."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from tqdm import tqdm

from src.charflow.characteristics import FlowIntegrationError, first_non_finite, rk4_step
from src.config import SHOW_PROGRESS
from src.core_model.bumps import TargetDatum
from src.forward.control_field import ControlField
from src.forward.solver import TrajectoryStore
from src.kernels.softened import WeightedSource, eval_E
from src.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class TangentStore:
    """delta f along every trajectory, shape (n_steps + 1, N)."""

    times: np.ndarray
    values: np.ndarray

    @property
    def final_values(self) -> np.ndarray:
        return self.values[-1]


def run_tangent(
    traj: TrajectoryStore,
    B: ControlField,
    H: ControlField,
    epsilon: Optional[float] = None,
) -> TangentStore:
    """Integrate d(df_p)/dt = (grad psi_df - v_p x H(t, x_p)) . (d_v f)_p from df = 0.

    grad psi_df(x) = -sum_q dV df_q K_eps(x - x_q) and (d_v f)_p is the velocity
    block of df0(z0_p) N_p(t).

    Args:
        traj: Forward run with inverse-flow Jacobians
        B: Control that generated the run
        H: Control direction
        epsilon: Kernel softening, defaults to the forward run's

    Returns:
        The tangent values at every step
    """
    if traj.inverse_jacobians is None:
        raise ValueError("tangent transport needs the inverse-flow Jacobians N")
    epsilon = traj.softening if epsilon is None else epsilon
    ens = traj.ensemble
    n_particles = ens.count
    self_index = np.arange(n_particles)
    n_steps = traj.n_steps
    dt = traj.dt

    def rhs(t, state):
        (delta,) = state
        Z = traj.state_at(t)
        X, V = Z[:, :3], Z[:, 3:]
        dvf = np.einsum("ni,nij->nj", ens.gradients, traj.inverse_jacobian_at(t))[:, 3:]
        forcing = -np.cross(V, H(t, X))
        if traj.self_field:
            src = WeightedSource(X, ens.cell_volume * delta)
            forcing = forcing - eval_E(src, X, epsilon, self_index)
        return (np.einsum("nd,nd->n", forcing, dvf),)

    values = np.empty((n_steps + 1, n_particles))
    values[0] = 0.0
    state = (np.zeros(n_particles),)
    for n in tqdm(range(n_steps), desc="tangent", disable=not SHOW_PROGRESS, leave=False):
        state = rk4_step(rhs, traj.times[n], dt, state)
        bad = first_non_finite(state)
        if bad is not None:
            raise FlowIntegrationError(step=n + 1, particle=bad)
        values[n + 1] = state[0]
    return TangentStore(traj.times, values)


def tangent_pairing(traj: TrajectoryStore, tangent: TangentStore, f_d: TargetDatum) -> float:
    """sum_p dV (f0_p - f_d(z_p(T))) df_p(T), the tracking part of J'(B)[H]."""
    ens = traj.ensemble
    residual = ens.values - f_d.value(traj.final_states)
    return float(ens.cell_volume * np.dot(residual, tangent.final_values))
