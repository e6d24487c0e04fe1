"""Backward costate transport along stored forward trajectories.

Along each characteristic the costate g and its phase-space gradient G solve

    dg/dt = Phi chi
    dG/dt = -A^T G + chi [dPhi; 0] + Phi grad(chi)

The homogeneous part is carried exactly by the stored inverse flow Jacobians:
with G = N^T W the Lagrangian gradient W obeys dW/dt = N^{-T} (chi [dPhi; 0] +
Phi grad(chi)), and W is constant without a source.

Phi is the skew form

    Phi(x) = 1/2 sum_q dV K_eps(x - x_q) . (f0_q Gv_q - g_q fv_q)

with fv_q the velocity gradient of the transported density. Both halves are
quadratures of the same integral; their difference vanishes identically for
g = f, so the discrete pass preserves the decomposition g = f - h.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from tqdm import tqdm

from src.charflow.characteristics import FlowIntegrationError, first_non_finite, rk4_step
from src.config import SHOW_PROGRESS
from src.core_model.bumps import TargetDatum
from src.core_model.cutoff import CutoffSpec
from src.forward.control_field import ControlField
from src.forward.solver import TrajectoryStore
from src.kernels.softened import ParticleSource, eval_phi, eval_phi_grad
from src.logger import get_logger

logger = get_logger(__name__)


class StoreAlignmentError(ValueError):
    """Raised when a derived store does not match its forward trajectory."""


@dataclass(frozen=True, eq=False)
class CostateStore:
    """Costate values g (n_steps + 1, N) and gradients G (n_steps + 1, N, 6)."""

    times: np.ndarray
    values: np.ndarray
    gradients: np.ndarray
    cutoff: CutoffSpec

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    @cached_property
    def _gradient_spline(self) -> CubicSpline:
        return CubicSpline(self.times, self.gradients, axis=0)

    def gradients_at(self, t: float) -> np.ndarray:
        dt = self.times[1] - self.times[0]
        u = t / dt
        n = int(round(u))
        if 0 <= n <= self.n_steps and abs(u - n) < 1e-9:
            return self.gradients[n]
        return self._gradient_spline(t)

    def velocity_gradients_at(self, t: float) -> np.ndarray:
        return self.gradients_at(t)[:, 3:]


def check_alignment(traj: TrajectoryStore, costate: CostateStore) -> None:
    if costate.times.shape != traj.times.shape or not np.allclose(
        costate.times, traj.times, rtol=0.0, atol=1e-12
    ):
        raise StoreAlignmentError("costate and trajectory use different time grids")
    if costate.values.shape[1] != traj.ensemble.count:
        raise StoreAlignmentError(
            f"costate holds {costate.values.shape[1]} particles, "
            f"trajectory {traj.ensemble.count}"
        )


def resolve_cutoff(traj: TrajectoryStore, cutoff: Optional[CutoffSpec]) -> CutoffSpec:
    """Default cutoff R1 = measured support radius, R2 = 2 R1; warn if too small."""
    radius = float(np.max(traj.support_radii()))
    if cutoff is None:
        return CutoffSpec.from_support(radius)
    if cutoff.inner_radius < radius:
        logger.warning(
            f"Cutoff inner radius {cutoff.inner_radius:.4g} is below the measured "
            f"support radius {radius:.4g}; the costate source is damped on the support"
        )
    return cutoff


def terminal_costate(
    traj: TrajectoryStore, f_d: TargetDatum
) -> Tuple[np.ndarray, np.ndarray]:
    """g_p(T) = f0_p - f_d(z_p(T)) and G_p(T) = df0(z0_p) N_p(T) - grad f_d(z_p(T))."""
    if traj.inverse_jacobians is None:
        raise ValueError("terminal costate needs a trajectory with Jacobians")
    ens = traj.ensemble
    final = traj.final_states
    g = ens.values - f_d.value(final)
    transported = np.einsum("ni,nij->nj", ens.gradients, traj.inverse_jacobians[-1])
    G = transported - f_d.gradient(final)
    return g, G


def check_control(traj: TrajectoryStore, B: ControlField) -> None:
    if not np.isclose(B.final_time, traj.final_time, rtol=0.0, atol=1e-12):
        raise StoreAlignmentError(
            f"control horizon {B.final_time:g} differs from trajectory horizon "
            f"{traj.final_time:g}"
        )


def _to_eulerian(N: np.ndarray, W: np.ndarray) -> np.ndarray:
    """G = N^T W per particle."""
    return np.einsum("nji,nj->ni", N, W)


def _to_lagrangian(N: np.ndarray, G: np.ndarray) -> np.ndarray:
    return np.linalg.solve(np.swapaxes(N, 1, 2), G[..., None])[..., 0]


def _solve_backward(
    traj: TrajectoryStore,
    terminal: Tuple[np.ndarray, np.ndarray],
    cutoff: CutoffSpec,
    epsilon: float,
    label: str,
) -> Tuple[np.ndarray, np.ndarray]:
    if traj.inverse_jacobians is None:
        raise ValueError("costate transport needs a trajectory with Jacobians")
    n_steps = traj.n_steps
    dt = traj.dt
    ens = traj.ensemble
    n_particles = ens.count
    self_index = np.arange(n_particles)
    cell_weights = np.full(n_particles, ens.cell_volume)
    zeros3 = np.zeros((n_particles, 3))

    def rhs(t, state):
        g, W = state
        if not traj.self_field:
            return np.zeros_like(g), np.zeros_like(W)
        Z = traj.state_at(t)
        N = traj.inverse_jacobian_at(t)
        Gv = _to_eulerian(N, W)[:, 3:]
        fv = _to_eulerian(N, ens.gradients)[:, 3:]
        skew = 0.5 * (ens.values[:, None] * Gv - g[:, None] * fv)
        src = ParticleSource(Z[:, :3], cell_weights, skew)
        phi = eval_phi(src, Z[:, :3], epsilon, self_index)
        dphi = eval_phi_grad(src, Z[:, :3], epsilon, self_index)
        chi = cutoff.value(Z)
        dchi = cutoff.gradient(Z)
        source = chi[:, None] * np.concatenate([dphi, zeros3], axis=1) + phi[:, None] * dchi
        return phi * chi, _to_lagrangian(N, source)

    values = np.empty((n_steps + 1, n_particles))
    gradients = np.empty((n_steps + 1, n_particles, 6))
    values[-1], gradients[-1] = terminal
    state = (values[-1].copy(), _to_lagrangian(traj.inverse_jacobians[-1], gradients[-1]))
    for n in tqdm(
        range(n_steps - 1, -1, -1), desc=label, disable=not SHOW_PROGRESS, leave=False
    ):
        state = rk4_step(rhs, traj.times[n + 1], -dt, state)
        bad = first_non_finite(state)
        if bad is not None:
            raise FlowIntegrationError(step=n, particle=bad)
        values[n] = state[0]
        gradients[n] = _to_eulerian(traj.inverse_jacobians[n], state[1])
    return values, gradients


def run_backward(
    traj: TrajectoryStore,
    B: ControlField,
    f_d: TargetDatum,
    cutoff: Optional[CutoffSpec] = None,
    epsilon: Optional[float] = None,
) -> CostateStore:
    """Backward RK4 costate pass from the terminal datum f(T) - f_d.

    Args:
        traj: Forward run with Jacobians
        B: Control that generated the run; its horizon must match the run's
        f_d: Target datum
        cutoff: Cutoff chi; defaults to R1 = support radius, R2 = 2 R1
        epsilon: Kernel softening, defaults to the forward run's

    Returns:
        Costate values and gradients at every step
    """
    check_control(traj, B)
    cutoff = resolve_cutoff(traj, cutoff)
    epsilon = traj.softening if epsilon is None else epsilon
    logger.info(f"Backward costate pass over {traj.n_steps} steps")
    values, gradients = _solve_backward(
        traj, terminal_costate(traj, f_d), cutoff, epsilon, "costate"
    )
    return CostateStore(traj.times, values, gradients, cutoff)


def run_backward_via_h(
    traj: TrajectoryStore,
    B: ControlField,
    f_d: TargetDatum,
    cutoff: Optional[CutoffSpec] = None,
    epsilon: Optional[float] = None,
) -> CostateStore:
    """Costate through the decomposition g = f - h.

    h solves the same backward system with terminal datum f_d; f is carried by
    the flow, so g_p = f0_p - h_p and G_p = df0(z0_p) N_p(t) - H_p.
    """
    if traj.inverse_jacobians is None:
        raise ValueError("costate decomposition needs a trajectory with Jacobians")
    check_control(traj, B)
    cutoff = resolve_cutoff(traj, cutoff)
    epsilon = traj.softening if epsilon is None else epsilon
    final = traj.final_states
    terminal = (f_d.value(final), f_d.gradient(final))
    h_values, h_gradients = _solve_backward(traj, terminal, cutoff, epsilon, "costate h")
    ens = traj.ensemble
    transported = np.einsum("ni,tnij->tnj", ens.gradients, traj.inverse_jacobians)
    return CostateStore(
        traj.times,
        ens.values[None, :] - h_values,
        transported - h_gradients,
        cutoff,
    )
