"""Magnetized characteristics and their variational equations.

    dx/dt = v,  dv/dt = F(t, x) + v x G(t, x)
    dM/dt = A M,  dN/dt = -N A,  A = [[0, I], [dF + C, -[G]x]]

with C_ij = (v x d_j G)_i and -[G]x the matrix of v -> v x G.
"""

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.core_model.phase_space import PhaseInput, as_phase_array
from src.logger import get_logger

logger = get_logger(__name__)

VectorField = Callable[[float, np.ndarray], np.ndarray]
State = Tuple[np.ndarray, ...]


class FlowIntegrationError(RuntimeError):
    """Raised when a trajectory produces non-finite values."""

    def __init__(self, step: int, particle: int, message: str = ""):
        self.step = step
        self.particle = particle
        super().__init__(
            message or f"non-finite state at step {step} for particle {particle}"
        )


def _zero_vector(t: float, X: np.ndarray) -> np.ndarray:
    return np.zeros_like(np.asarray(X, dtype=float))


def _zero_matrix(t: float, X: np.ndarray) -> np.ndarray:
    return np.zeros(np.asarray(X).shape[:-1] + (3, 3))


@dataclass(frozen=True)
class FieldProviders:
    """Electric and magnetic forcing with their spatial Jacobians, batched over (N, 3)."""

    electric: VectorField = _zero_vector
    electric_jacobian: VectorField = _zero_matrix
    magnetic: VectorField = _zero_vector
    magnetic_jacobian: VectorField = _zero_matrix

    @classmethod
    def uniform_magnetic(cls, b: Sequence[float]) -> "FieldProviders":
        b = np.asarray(b, dtype=float)

        def magnetic(t, X):
            return np.broadcast_to(b, np.asarray(X).shape).copy()

        return cls(magnetic=magnetic)


def cross_matrix_negative(G: np.ndarray) -> np.ndarray:
    """Matrices S with S v = v x G, shape (N, 3, 3)."""
    S = np.zeros(G.shape[:-1] + (3, 3))
    S[..., 0, 1] = G[..., 2]
    S[..., 0, 2] = -G[..., 1]
    S[..., 1, 0] = -G[..., 2]
    S[..., 1, 2] = G[..., 0]
    S[..., 2, 0] = G[..., 1]
    S[..., 2, 1] = -G[..., 0]
    return S


def assemble_system_matrix(
    V: np.ndarray, dF: np.ndarray, G: np.ndarray, dG: np.ndarray
) -> np.ndarray:
    """Variational matrix A for every particle, shape (N, 6, 6).

    Args:
        V: Velocities, shape (N, 3)
        dF: Electric Jacobians dF_i/dx_j, shape (N, 3, 3)
        G: Magnetic field values, shape (N, 3)
        dG: Magnetic Jacobians dG_i/dx_j, shape (N, 3, 3)
    """
    n = V.shape[0]
    A = np.zeros((n, 6, 6))
    A[:, 0:3, 3:6] = np.eye(3)
    # column j of C is v x (d_j G)
    C = np.cross(V[:, None, :], np.swapaxes(dG, 1, 2)).swapaxes(1, 2)
    A[:, 3:6, 0:3] = dF + C
    A[:, 3:6, 3:6] = cross_matrix_negative(G)
    return A


def char_rhs(t: float, z: PhaseInput, fields: FieldProviders) -> np.ndarray:
    """Right-hand side (v, F + v x G) of the characteristic system."""
    Z, single = as_phase_array(z)
    X, V = Z[:, :3], Z[:, 3:]
    dv = fields.electric(t, X) + np.cross(V, fields.magnetic(t, X))
    out = np.concatenate([V, dv], axis=1)
    return out[0] if single else out


def system_matrix(t: float, z: PhaseInput, fields: FieldProviders) -> np.ndarray:
    Z, single = as_phase_array(z)
    X, V = Z[:, :3], Z[:, 3:]
    A = assemble_system_matrix(
        V,
        fields.electric_jacobian(t, X),
        fields.magnetic(t, X),
        fields.magnetic_jacobian(t, X),
    )
    return A[0] if single else A


@dataclass(frozen=True, eq=False)
class FlowState:
    """Phase point with forward Jacobian M and inverse-flow Jacobian N."""

    t: float
    z: np.ndarray
    M: Optional[np.ndarray] = None
    N: Optional[np.ndarray] = None


def variational_rhs(
    t: float, state: FlowState, fields: FieldProviders
) -> Tuple[np.ndarray, np.ndarray]:
    """(dM, dN) = (A M, -N A) along the state's trajectory."""
    A = system_matrix(t, state.z, fields)
    return A @ state.M, -state.N @ A


def rk4_step(
    rhs: Callable[[float, State], State], t: float, h: float, state: State
) -> State:
    """One classical Runge-Kutta step on a tuple of arrays."""

    def shifted(k: State, c: float) -> State:
        return tuple(y + c * dy for y, dy in zip(state, k))

    k1 = rhs(t, state)
    k2 = rhs(t + 0.5 * h, shifted(k1, 0.5 * h))
    k3 = rhs(t + 0.5 * h, shifted(k2, 0.5 * h))
    k4 = rhs(t + h, shifted(k3, h))
    return tuple(
        y + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
        for y, a, b, c, d in zip(state, k1, k2, k3, k4)
    )


def step_count(t0: float, t1: float, dt: float) -> int:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return max(1, int(round(abs(t1 - t0) / dt))) if t1 != t0 else 0


def first_non_finite(arrays: Sequence[np.ndarray]) -> Optional[int]:
    """Index of the first particle (leading axis) with a non-finite entry, if any."""
    for arr in arrays:
        flat = arr.reshape(arr.shape[0], -1)
        bad = ~np.all(np.isfinite(flat), axis=1)
        if bad.any():
            return int(np.argmax(bad))
    return None


def integrate_flow(
    z0: PhaseInput,
    t0: float,
    t1: float,
    dt: float,
    fields: FieldProviders,
    with_jacobians: bool = True,
) -> List[FlowState]:
    """RK4 path of the characteristic system from t0 to t1 (either direction).

    Args:
        z0: Start point(s), a PhasePoint, a 6-vector or an (N, 6) batch
        t0: Start time
        t1: End time, may lie before t0
        dt: Positive step length; the interval is split into round(|t1-t0|/dt) steps
        fields: Forcing providers
        with_jacobians: Also integrate M and N from the identity

    Returns:
        FlowState for every step including the start, shaped like z0
    """
    Z, single = as_phase_array(z0)
    n_steps = step_count(t0, t1, dt)
    h = (t1 - t0) / n_steps if n_steps else 0.0

    def rhs(t, state):
        Zs = state[0]
        dz = char_rhs(t, Zs, fields)
        if not with_jacobians:
            return (dz,)
        A = system_matrix(t, Zs, fields)
        return dz, A @ state[1], -state[2] @ A

    eye = np.broadcast_to(np.eye(6), (Z.shape[0], 6, 6)).copy()
    state: State = (Z.copy(), eye, eye.copy()) if with_jacobians else (Z.copy(),)

    def snapshot(t, s):
        if single:
            parts = [p[0] for p in s]
        else:
            parts = list(s)
        if with_jacobians:
            return FlowState(t=t, z=parts[0], M=parts[1], N=parts[2])
        return FlowState(t=t, z=parts[0])

    path = [snapshot(t0, state)]
    for n in range(n_steps):
        t = t0 + n * h
        state = rk4_step(rhs, t, h, state)
        bad = first_non_finite(state)
        if bad is not None:
            raise FlowIntegrationError(step=n + 1, particle=bad)
        path.append(snapshot(t0 + (n + 1) * h, state))
    return path


def discrete_l2_linf_norm(times: np.ndarray, sup_values: np.ndarray) -> float:
    """Trapezoid surrogate of ||A||_{L^2(0,T; L^inf)} from per-step sup norms."""
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        return 0.0
    return float(math.sqrt(np.trapezoid(np.asarray(sup_values) ** 2, times)))


def support_bound_zeta(r: float, T: float, A_norm: float) -> float:
    """zeta(r) = e^{2T} (r + sqrt(T) A_norm)."""
    if r < 0 or T < 0 or A_norm < 0:
        raise ValueError(f"support_bound_zeta needs nonnegative inputs, got {r}, {T}, {A_norm}")
    return math.exp(2.0 * T) * (r + math.sqrt(T) * A_norm)
