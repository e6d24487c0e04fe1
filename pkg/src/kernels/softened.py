"""Softened Newtonian kernel sums over particle sources.

psi_eps(xi) = (|xi|^2 + eps^2)^(-1/2) and K_eps(xi) = xi (|xi|^2 + eps^2)^(-3/2),
the plasma (repulsive) sign convention: eval_E returns -grad psi.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.kernels.pairwise import pair_reduce


@dataclass(frozen=True)
class SofteningParam:
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"softening epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True, eq=False)
class WeightedSource:
    """Source positions with scalar (N,) or vector (N, 3) weights."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape[0] != positions.shape[0]:
            raise ValueError(
                f"positions ({positions.shape[0]}) and weights ({weights.shape[0]}) "
                "must have equal length"
            )
        if weights.ndim not in (1, 2) or (weights.ndim == 2 and weights.shape[1] != 3):
            raise ValueError(f"weights must have shape (N,) or (N, 3), got {weights.shape}")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "weights", weights)

    @property
    def count(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True, eq=False)
class ParticleSource:
    """Particles with weights omega_q and costate velocity gradients Gv_q."""

    positions: np.ndarray
    weights: np.ndarray
    velocity_gradients: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        gv = np.asarray(self.velocity_gradients, dtype=float).reshape(-1, 3)
        if not positions.shape[0] == weights.shape[0] == gv.shape[0]:
            raise ValueError(
                "positions, weights and velocity_gradients must have equal length, got "
                f"{positions.shape[0]}, {weights.shape[0]}, {gv.shape[0]}"
            )
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "velocity_gradients", gv)


def _targets(x) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return arr.reshape(1, 3), True
    return arr.reshape(-1, 3), False


def _inverse_distance(diff: np.ndarray, epsilon: float, keep) -> np.ndarray:
    """(|xi|^2 + eps^2)^(-1/2) with coincident unsoftened pairs and excluded pairs set to 0."""
    r2 = np.einsum("mdn,mdn->mn", diff, diff) + epsilon**2
    with np.errstate(divide="ignore"):
        inv = np.where(r2 > 0, 1.0 / np.sqrt(np.where(r2 > 0, r2, 1.0)), 0.0)
    if keep is not None:
        inv = inv * keep
    return inv


def eval_psi(
    src: WeightedSource, x, epsilon: float, self_index: Optional[np.ndarray] = None
):
    """Potential sum_q w_q psi_eps(x - x_q)."""
    X, single = _targets(x)
    w = src.weights.reshape(-1)

    def term(diff, keep, rows):
        return _inverse_distance(diff, epsilon, keep) * w[None, :]

    out = pair_reduce(X, src.positions, term, self_index)
    return float(out[0]) if single else out


def eval_E(
    src: WeightedSource, x, epsilon: float, self_index: Optional[np.ndarray] = None
):
    """Field sum_q w_q K_eps(x - x_q), equal to minus the gradient of eval_psi."""
    X, single = _targets(x)
    w = src.weights.reshape(-1)

    def term(diff, keep, rows):
        inv = _inverse_distance(diff, epsilon, keep)
        return diff * (inv**3 * w[None, :])[:, None, :]

    out = pair_reduce(X, src.positions, term, self_index)
    return out[0] if single else out


def _kernel_jacobian(diff: np.ndarray, inv: np.ndarray) -> np.ndarray:
    """dK_eps = I s^(-3/2) - 3 xi xi^T s^(-5/2), shape (m, 3, 3, n)."""
    inv3 = inv**3
    inv5 = inv3 * inv**2
    eye = np.eye(3)[None, :, :, None]
    return eye * inv3[:, None, None, :] - 3.0 * (
        diff[:, :, None, :] * diff[:, None, :, :] * inv5[:, None, None, :]
    )


def eval_E_jacobian(
    src: WeightedSource, x, epsilon: float, self_index: Optional[np.ndarray] = None
):
    """Jacobian d(eval_E)/dx; symmetric, shape (3, 3) or (M, 3, 3)."""
    X, single = _targets(x)
    w = src.weights.reshape(-1)

    def term(diff, keep, rows):
        inv = _inverse_distance(diff, epsilon, keep)
        return _kernel_jacobian(diff, inv) * w[None, None, None, :]

    out = pair_reduce(X, src.positions, term, self_index)
    return out[0] if single else out


def eval_phi(
    src: ParticleSource, x, epsilon: float, self_index: Optional[np.ndarray] = None
):
    """Costate source sum_q omega_q K_eps(x - x_q) . Gv_q."""
    X, single = _targets(x)
    w = src.weights
    gv_t = np.ascontiguousarray(src.velocity_gradients.T)

    def term(diff, keep, rows):
        inv = _inverse_distance(diff, epsilon, keep)
        projected = np.einsum("mdn,dn->mn", diff, gv_t)
        return projected * inv**3 * w[None, :]

    out = pair_reduce(X, src.positions, term, self_index)
    return float(out[0]) if single else out


def eval_phi_grad(
    src: ParticleSource, x, epsilon: float, self_index: Optional[np.ndarray] = None
):
    """x-gradient of eval_phi: sum_q omega_q dK_eps(x - x_q) Gv_q."""
    X, single = _targets(x)
    w = src.weights
    gv_t = np.ascontiguousarray(src.velocity_gradients.T)

    def term(diff, keep, rows):
        inv = _inverse_distance(diff, epsilon, keep)
        inv3 = inv**3
        projected = np.einsum("mdn,dn->mn", diff, gv_t)
        grad = gv_t[None, :, :] * inv3[:, None, :] - 3.0 * diff * (
            projected * inv3 * inv**2
        )[:, None, :]
        return grad * w[None, None, :]

    out = pair_reduce(X, src.positions, term, self_index)
    return out[0] if single else out


def eval_vector_newton(
    src: WeightedSource, x, epsilon: float, self_index: Optional[np.ndarray] = None
):
    """Componentwise Newton potential sum_q psi_eps(x - x_q) w_q of vector weights."""
    if src.weights.ndim != 2:
        raise ValueError("eval_vector_newton needs vector weights of shape (N, 3)")
    X, single = _targets(x)
    w_t = np.ascontiguousarray(src.weights.T)

    def term(diff, keep, rows):
        inv = _inverse_distance(diff, epsilon, keep)
        return inv[:, None, :] * w_t[None, :, :]

    out = pair_reduce(X, src.positions, term, self_index)
    return out[0] if single else out
