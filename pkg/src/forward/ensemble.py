"""Particle quadrature of the initial datum."""

import math
from dataclasses import dataclass
from typing import List

import numpy as np

from src.core_model.bumps import BumpSum
from src.logger import get_logger

logger = get_logger(__name__)


class EmptyEnsembleError(ValueError):
    """Raised when sampling keeps no particle above the weight floor."""


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Sampled points z0_p with values f0_p, gradients df0_p and weights f0_p * dV."""

    points: np.ndarray
    cell_volume: float
    values: np.ndarray
    gradients: np.ndarray
    spacing: float

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1, 6)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        gradients = np.asarray(self.gradients, dtype=float).reshape(-1, 6)
        if not points.shape[0] == values.shape[0] == gradients.shape[0]:
            raise ValueError("points, values and gradients must have equal length")
        if np.any(values < 0):
            raise ValueError("initial datum values must be nonnegative")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "gradients", gradients)

    @property
    def weights(self) -> np.ndarray:
        return self.values * self.cell_volume

    def l2_norm_squared(self) -> float:
        """sum_p omega_p f0_p, the quadrature of ||f0||_2^2."""
        return float(np.dot(self.weights, self.values))

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def velocities(self) -> np.ndarray:
        return self.points[:, 3:]

    def __repr__(self) -> str:
        return (
            f"ParticleEnsemble(count={self.count}, spacing={self.spacing}, "
            f"mass={float(np.sum(self.weights)):.6g})"
        )


def _ball_points(center: np.ndarray, radius: float, ref: np.ndarray, h: float):
    """Points ref + h*k (k integer vectors) strictly inside the 3-ball."""
    lo = np.ceil((center - radius - ref) / h).astype(int)
    hi = np.floor((center + radius - ref) / h).astype(int)
    axes = [ref[d] + h * np.arange(lo[d], hi[d] + 1) for d in range(3)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    inside = np.sum((mesh - center) ** 2, axis=1) < radius**2
    return mesh[inside]


def _union_points(chunks: List[np.ndarray], ref: np.ndarray, h: float) -> np.ndarray:
    if not chunks:
        return np.zeros((0, 3))
    stacked = np.concatenate(chunks, axis=0)
    keys = np.round((stacked - ref) / h).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return stacked[np.sort(first)]


def sample_ensemble(
    datum: BumpSum, spacing: float, weight_floor: float = 0.0
) -> ParticleEnsemble:
    """Sample the datum on a uniform phase-space lattice of the given spacing.

    The lattice passes through the center of the first bump. Points in any
    bump's support are kept when f0 * spacing^6 exceeds the weight floor.

    Args:
        datum: Initial datum as a bump sum
        spacing: Lattice spacing h_s, also the particle cell width
        weight_floor: Minimum particle weight

    Returns:
        The particle ensemble with cell volume spacing^6
    """
    if not spacing > 0:
        raise ValueError(f"sample_spacing must be positive, got {spacing}")
    if weight_floor < 0:
        raise ValueError(f"weight_floor must be nonnegative, got {weight_floor}")
    bumps = [b for b in datum.bumps if b.amplitude > 0]
    if not bumps:
        raise EmptyEnsembleError("initial datum vanishes identically")

    ref = np.asarray(bumps[0].center)
    xs = _union_points(
        [_ball_points(b.center_x, b.radius_x, ref[:3], spacing) for b in bumps],
        ref[:3],
        spacing,
    )
    vs = _union_points(
        [_ball_points(b.center_v, b.radius_v, ref[3:], spacing) for b in bumps],
        ref[3:],
        spacing,
    )
    points = np.concatenate(
        [np.repeat(xs, vs.shape[0], axis=0), np.tile(vs, (xs.shape[0], 1))], axis=1
    )
    values = datum.value(points)
    cell_volume = spacing**6
    keep = values * cell_volume > weight_floor
    if not keep.any():
        raise EmptyEnsembleError(
            f"no sample point above weight_floor={weight_floor} at spacing {spacing}"
        )
    points = points[keep]
    ensemble = ParticleEnsemble(
        points=points,
        cell_volume=cell_volume,
        values=datum.value(points),
        gradients=datum.gradient(points),
        spacing=spacing,
    )
    logger.info(
        f"Sampled {ensemble.count} particles at spacing {spacing:g} "
        f"(total mass {float(np.sum(ensemble.weights)):.6g})"
    )
    return ensemble


def lp_norm(ens: ParticleEnsemble, p: float) -> float:
    """Particle-quadrature L^p norm of the datum; p = inf gives the max value."""
    if p < 1:
        raise ValueError(f"lp_norm needs p >= 1, got {p}")
    if math.isinf(p):
        return float(np.max(ens.values))
    return float(np.sum(ens.cell_volume * ens.values**p) ** (1.0 / p))
