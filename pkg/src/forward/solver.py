"""Self-consistent forward solvers for the magnetized Vlasov-Poisson system."""

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from tqdm import tqdm

from src.charflow.characteristics import (
    FieldProviders,
    FlowIntegrationError,
    char_rhs,
    discrete_l2_linf_norm,
    first_non_finite,
    rk4_step,
    system_matrix,
)
from src.config import SHOW_PROGRESS
from src.core_model.phase_space import RunConfig
from src.forward.control_field import ControlField
from src.forward.ensemble import ParticleEnsemble
from src.kernels.softened import WeightedSource, eval_E, eval_E_jacobian
from src.logger import get_logger

logger = get_logger(__name__)

SourcePositions = Callable[[int, int, np.ndarray], np.ndarray]

RK4_STAGES = 4


class PicardConvergenceError(RuntimeError):
    """Raised when the Picard recursion does not reach its tolerance."""

    def __init__(self, history: List[float], tol: float):
        self.history = list(history)
        last = f"{history[-1]:.3e}" if history else "n/a"
        super().__init__(
            f"Picard recursion did not converge to {tol:g} in {len(history)} "
            f"iterations (last difference {last})"
        )


class SelfConsistentField:
    """Electric field sum_q omega_q K_eps(x - x_q) of a frozen particle snapshot.

    With exclude_self, evaluation points aligned row by row with the sources
    skip their own charge.
    """

    def __init__(
        self,
        positions: np.ndarray,
        weights: np.ndarray,
        epsilon: float,
        exclude_self: bool = False,
    ):
        self.source = WeightedSource(positions, weights)
        self.epsilon = epsilon
        self.exclude_self = exclude_self

    def _self_index(self, X: np.ndarray) -> Optional[np.ndarray]:
        if self.exclude_self and X.shape[0] == self.source.count:
            return np.arange(self.source.count)
        return None

    def __call__(self, t: float, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        return eval_E(self.source, X, self.epsilon, self._self_index(X))

    def jacobian(self, t: float, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        return eval_E_jacobian(self.source, X, self.epsilon, self._self_index(X))


def self_consistent_field(
    positions: np.ndarray, weights: np.ndarray, epsilon: float, exclude_self: bool = True
) -> SelfConsistentField:
    """Electric provider closing over one snapshot of particle positions."""
    positions = np.asarray(positions, dtype=float)
    if not np.all(np.isfinite(positions)):
        raise ValueError("snapshot positions must be finite")
    return SelfConsistentField(positions, weights, epsilon, exclude_self)


@dataclass(frozen=True, eq=False)
class TrajectoryStore:
    """Particle states at every time step of a forward run.

    states has shape (n_steps + 1, N, 6); forward_jacobians and
    inverse_jacobians, when present, (n_steps + 1, N, 6, 6).
    stage_positions, when recorded, holds the positions at the four RK4
    stages of every step, shape (n_steps, 4, N, 3).
    """

    times: np.ndarray
    states: np.ndarray
    forward_jacobians: Optional[np.ndarray]
    inverse_jacobians: Optional[np.ndarray]
    control: ControlField
    ensemble: ParticleEnsemble
    softening: float
    electric_sup: np.ndarray
    self_field: bool = True
    stage_positions: Optional[np.ndarray] = None

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def final_states(self) -> np.ndarray:
        return self.states[-1]

    @property
    def has_jacobians(self) -> bool:
        return self.forward_jacobians is not None and self.inverse_jacobians is not None

    @cached_property
    def _state_spline(self) -> CubicSpline:
        return CubicSpline(self.times, self.states, axis=0)

    @cached_property
    def _inverse_spline(self) -> CubicSpline:
        if self.inverse_jacobians is None:
            raise ValueError("trajectory was integrated without Jacobians")
        return CubicSpline(self.times, self.inverse_jacobians, axis=0)

    def step_index(self, t: float) -> Optional[int]:
        """Index of the stored step at time t, if t is a step time."""
        u = t / self.dt
        n = int(round(u))
        if 0 <= n <= self.n_steps and abs(u - n) < 1e-9:
            return n
        return None

    def state_at(self, t: float) -> np.ndarray:
        """States at time t: stored values at step times, cubic interpolation between."""
        n = self.step_index(t)
        return self.states[n] if n is not None else self._state_spline(t)

    def inverse_jacobian_at(self, t: float) -> np.ndarray:
        if self.inverse_jacobians is None:
            raise ValueError("trajectory was integrated without Jacobians")
        n = self.step_index(t)
        return self.inverse_jacobians[n] if n is not None else self._inverse_spline(t)

    def electric_norm(self) -> float:
        """Measured discrete L^2(0,T; L^inf) norm of the self-consistent field."""
        return discrete_l2_linf_norm(self.times, self.electric_sup)

    def support_radii(self) -> np.ndarray:
        return np.max(np.linalg.norm(self.states, axis=2), axis=1)


def support_radius(traj: TrajectoryStore, n: int) -> float:
    """max_p |z_p(t_n)|."""
    if not 0 <= n <= traj.n_steps:
        raise ValueError(f"step {n} outside 0..{traj.n_steps}")
    return float(np.max(np.linalg.norm(traj.states[n], axis=1)))


def _providers(
    ens: ParticleEnsemble,
    B: ControlField,
    epsilon: float,
    source_positions: Optional[np.ndarray],
) -> FieldProviders:
    if source_positions is None:
        return FieldProviders(magnetic=B, magnetic_jacobian=B.jacobian)
    field = self_consistent_field(source_positions, ens.weights, epsilon)
    return FieldProviders(
        electric=field,
        electric_jacobian=field.jacobian,
        magnetic=B,
        magnetic_jacobian=B.jacobian,
    )


def _integrate(
    ens: ParticleEnsemble,
    B: ControlField,
    cfg: RunConfig,
    sources: SourcePositions,
    self_field: bool,
    with_jacobians: bool,
    label: str,
    record_stages: bool = False,
) -> TrajectoryStore:
    """RK4 over the run grid; sources(n, stage, Z) gives the charge positions
    seen at stage 0..3 of step n (stage 0 of step n_steps for the final sup)."""
    n_steps = cfg.n_steps
    dt = cfg.T / n_steps
    times = dt * np.arange(n_steps + 1)
    n_particles = ens.count
    stage_positions = np.empty((n_steps, RK4_STAGES, n_particles, 3)) if record_stages else None

    def rhs(n, stage, t, state):
        Z = state[0]
        if stage_positions is not None:
            stage_positions[n, stage] = Z[:, :3]
        charges = sources(n, stage, Z) if self_field else None
        providers = _providers(ens, B, cfg.softening, charges)
        dz = char_rhs(t, Z, providers)
        if not with_jacobians:
            return (dz,)
        A = system_matrix(t, Z, providers)
        return dz, A @ state[1], -state[2] @ A

    def electric_sup(n, Z) -> float:
        if not self_field:
            return 0.0
        E = self_consistent_field(sources(n, 0, Z), ens.weights, cfg.softening)(
            times[n], Z[:, :3]
        )
        return float(np.max(np.linalg.norm(E, axis=1)))

    states = np.empty((n_steps + 1, n_particles, 6))
    states[0] = ens.points
    forward_jac = inverse_jac = None
    eye = np.broadcast_to(np.eye(6), (n_particles, 6, 6)).copy()
    state = (ens.points.copy(),)
    if with_jacobians:
        forward_jac = np.empty((n_steps + 1, n_particles, 6, 6))
        inverse_jac = np.empty((n_steps + 1, n_particles, 6, 6))
        forward_jac[0] = inverse_jac[0] = eye
        state = (ens.points.copy(), eye, eye.copy())
    sups = np.empty(n_steps + 1)
    sups[0] = electric_sup(0, states[0])

    warned = False
    for n in tqdm(range(n_steps), desc=label, disable=not SHOW_PROGRESS, leave=False):
        # rk4_step evaluates its four stages in order
        stages = iter(range(RK4_STAGES))
        state = rk4_step(lambda t, y: rhs(n, next(stages), t, y), times[n], dt, state)
        bad = first_non_finite(state)
        if bad is not None:
            raise FlowIntegrationError(step=n + 1, particle=bad)
        states[n + 1] = state[0]
        if with_jacobians:
            forward_jac[n + 1] = state[1]
            inverse_jac[n + 1] = state[2]
        sups[n + 1] = electric_sup(n + 1, state[0])
        if not warned and not np.all(B.contains(state[0][:, :3])):
            logger.warning(
                f"Particles left the control grid at t={times[n + 1]:.4g}; "
                "the magnetic field is zero there"
            )
            warned = True

    return TrajectoryStore(
        times=times,
        states=states,
        forward_jacobians=forward_jac,
        inverse_jacobians=inverse_jac,
        control=B,
        ensemble=ens,
        softening=cfg.softening,
        electric_sup=sups,
        self_field=self_field,
        stage_positions=stage_positions,
    )


def run_forward(
    ens: ParticleEnsemble,
    B: ControlField,
    cfg: RunConfig,
    self_field: bool = True,
    with_jacobians: bool = True,
) -> TrajectoryStore:
    """Direct self-consistent RK4 solve.

    At each stage the electric field is recomputed from the same-stage positions
    of all particles, each particle skipping its own charge.

    Args:
        ens: Particle ensemble of the initial datum
        B: Magnetic control
        cfg: Run configuration (T, dt, softening)
        self_field: Set False for massless tracers in the external field only
        with_jacobians: Integrate the variational matrices M and N

    Returns:
        The complete trajectory store
    """
    if B.final_time != cfg.T:
        raise ValueError(f"control final time {B.final_time} differs from run.T {cfg.T}")
    logger.info(
        f"Forward run: {ens.count} particles, {cfg.n_steps} steps of {cfg.T / cfg.n_steps:g}"
    )
    traj = _integrate(
        ens,
        B,
        cfg,
        sources=lambda n, stage, Z: Z[:, :3],
        self_field=self_field,
        with_jacobians=with_jacobians,
        label="forward",
    )
    logger.info(
        f"Forward run done: support radius {traj.support_radii()[-1]:.4f}, "
        f"electric norm {traj.electric_norm():.4e}"
    )
    return traj


def _frozen_stages(frozen: TrajectoryStore) -> SourcePositions:
    def sources(n: int, stage: int, Z: np.ndarray) -> np.ndarray:
        if n == frozen.n_steps:
            return frozen.states[n, :, :3]
        return frozen.stage_positions[n, stage]

    return sources


def run_forward_picard(
    ens: ParticleEnsemble,
    B: ControlField,
    cfg: RunConfig,
    max_iters: int,
    tol: float,
    with_jacobians: bool = False,
) -> Tuple[TrajectoryStore, List[float]]:
    """Picard recursion on the field: each iterate moves particles in the frozen
    electric field of the previous iterate's trajectories.

    Each RK4 stage sees the charges at the same stage of the previous iterate,
    so a converged recursion reproduces the direct solve. Iterate 0 uses the
    field of the untransported initial ensemble. Up to max_iters further
    iterates are computed; the run converges when the sup distance between
    successive iterates drops below tol.

    Returns:
        The converged store and the list of successive differences

    Raises:
        PicardConvergenceError: tol not reached within max_iters
    """
    if max_iters < 1:
        raise ValueError(f"picard.max_iters must be at least 1, got {max_iters}")
    initial_positions = ens.positions.copy()
    previous = _integrate(
        ens,
        B,
        cfg,
        sources=lambda n, stage, Z: initial_positions,
        self_field=True,
        with_jacobians=with_jacobians,
        label="picard 0",
        record_stages=True,
    )
    history: List[float] = []
    for k in range(1, max_iters + 1):
        current = _integrate(
            ens,
            B,
            cfg,
            sources=_frozen_stages(previous),
            self_field=True,
            with_jacobians=with_jacobians,
            label=f"picard {k}",
            record_stages=True,
        )
        difference = float(np.max(np.abs(current.states - previous.states)))
        history.append(difference)
        logger.debug(f"Picard iterate {k}: difference {difference:.3e}")
        previous = current
        if difference < tol:
            logger.info(f"Picard recursion converged after {k} iterations")
            return current, history
    raise PicardConvergenceError(history, tol)
