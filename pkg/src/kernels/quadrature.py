"""Tensor-grid quadrature of the costate coupling for analytic bump data.

Phi_{a,f}(x)  = - int int K(x - y) . (grad_w a) f dw dy
Phi'_{a,f}(x) = - int int K(x - y) . (grad_w a grad_y f - grad_w f grad_y a) dw dy

Every bump factorizes into a spatial and a velocity factor, so the w-integrals
are reduced first and the remaining y-integrals are kernel sums over the
spatial Gauss-Legendre nodes.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from src.core_model.bumps import BumpSum
from src.kernels.softened import ParticleSource, eval_phi


class QuadratureGridError(ValueError):
    """Raised when a quadrature box does not cover the data supports."""


@dataclass(frozen=True)
class QuadratureGrid:
    """Phase-space box [lower, upper] with a Gauss-Legendre rule per axis."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    points_per_axis: int = 24

    def __post_init__(self):
        lower = tuple(float(c) for c in self.lower)
        upper = tuple(float(c) for c in self.upper)
        if len(lower) != 6 or len(upper) != 6:
            raise ValueError("quadrature box bounds must be 6-vectors")
        if any(hi <= lo for lo, hi in zip(lower, upper)):
            raise ValueError(f"quadrature box is empty: {lower} .. {upper}")
        if self.points_per_axis < 2:
            raise ValueError("points_per_axis must be at least 2")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def _rule(self, lo, hi) -> Tuple[np.ndarray, np.ndarray]:
        nodes, weights = leggauss(self.points_per_axis)
        axes = [0.5 * (h - l) * nodes + 0.5 * (h + l) for l, h in zip(lo, hi)]
        axis_weights = [0.5 * (h - l) * weights for l, h in zip(lo, hi)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        w = np.einsum("i,j,k->ijk", *axis_weights).ravel()
        return mesh, w

    def spatial_rule(self):
        return self._rule(self.lower[:3], self.upper[:3])

    def velocity_rule(self):
        return self._rule(self.lower[3:], self.upper[3:])

    def check_covers(self, *data: BumpSum) -> None:
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        for datum in data:
            for box_lo, box_hi in datum.support_boxes():
                if np.any(box_lo < lo - 1e-12) or np.any(box_hi > hi + 1e-12):
                    raise QuadratureGridError(
                        f"quadrature box {self.lower}..{self.upper} does not cover the "
                        f"bump support {box_lo.tolist()}..{box_hi.tolist()}"
                    )


def _velocity_moments(a_bump, f_bump, V, Wv) -> Tuple[np.ndarray, np.ndarray, float]:
    """c = int grad a_v f_v dw, d = int a_v grad f_v dw, e = int a_v f_v dw."""
    av, dav = a_bump.velocity_factor(V)
    fv, dfv = f_bump.velocity_factor(V)
    c = np.einsum("q,qd->d", Wv * fv, dav)
    d = np.einsum("q,qd->d", Wv * av, dfv)
    return c, d, float(np.sum(Wv * av * fv))


def _coupled_sum(Y, weights, moment, x, epsilon) -> np.ndarray:
    """sum_y weights(y) K_eps(x - y) . moment."""
    src = ParticleSource(
        positions=Y, weights=weights, velocity_gradients=np.tile(moment, (Y.shape[0], 1))
    )
    return np.atleast_1d(eval_phi(src, x, epsilon))


def eval_phi_quadrature(
    a: BumpSum, f: BumpSum, x, grid: QuadratureGrid, epsilon: float = 0.0
):
    """Direct quadrature of Phi_{a,f} at spatial points x."""
    grid.check_covers(a, f)
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y, Wy = grid.spatial_rule()
    V, Wv = grid.velocity_rule()
    out = np.zeros(X.shape[0])
    for a_bump in a.bumps:
        ax, _ = a_bump.spatial_factor(Y)
        for f_bump in f.bumps:
            c, _, _ = _velocity_moments(a_bump, f_bump, V, Wv)
            fx, _ = f_bump.spatial_factor(Y)
            out -= _coupled_sum(Y, Wy * ax * fx, c, X, epsilon)
    return float(out[0]) if np.ndim(x) == 1 else out


def eval_phi_prime_analytic(
    a: BumpSum, f: BumpSum, x, grid: QuadratureGrid, epsilon: float = 0.0
):
    """Quadrature of Phi'_{a,f} at spatial points x, shape (3,) or (M, 3).

    Args:
        a: Test function playing the role of the costate
        f: Test function playing the role of the distribution
        x: Evaluation point(s)
        grid: Phase-space quadrature box covering both supports
        epsilon: Kernel softening

    Returns:
        The three components of Phi'_{a,f}
    """
    grid.check_covers(a, f)
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Y, Wy = grid.spatial_rule()
    V, Wv = grid.velocity_rule()
    out = np.zeros((X.shape[0], 3))
    for a_bump in a.bumps:
        ax, dax = a_bump.spatial_factor(Y)
        for f_bump in f.bumps:
            c, d, _ = _velocity_moments(a_bump, f_bump, V, Wv)
            fx, dfx = f_bump.spatial_factor(Y)
            for j in range(3):
                out[:, j] -= _coupled_sum(Y, Wy * ax * dfx[:, j], c, X, epsilon)
                out[:, j] += _coupled_sum(Y, Wy * fx * dax[:, j], d, X, epsilon)
    return out[0] if np.ndim(x) == 1 else out
