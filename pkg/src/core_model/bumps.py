"""Compactly supported polynomial bumps used as initial and target data."""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Protocol, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import beta as beta_function

from src.core_model.phase_space import PhaseInput, as_phase_array


class TargetDatum(Protocol):
    """Anything that can serve as a tracking target f_d."""

    def value(self, Z: np.ndarray) -> np.ndarray: ...

    def gradient(self, Z: np.ndarray) -> np.ndarray: ...

    def l2_norm_squared(self) -> float: ...


def _ball_power_integral(radius: float, power: float) -> float:
    """Integral of (1 - |y|^2/r^2)^power over the 3-ball of radius r."""
    return 2.0 * math.pi * radius**3 * beta_function(1.5, power + 1.0)


@dataclass(frozen=True)
class CompactBump:
    """a * (1 - |x-c_x|^2/r_x^2)^m * (1 - |v-c_v|^2/r_v^2)^m on the product of balls."""

    center: Tuple[float, ...]
    radius_x: float
    radius_v: float
    amplitude: float = 1.0
    exponent: int = 3

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        if len(center) != 6 or not all(math.isfinite(c) for c in center):
            raise ValueError(f"bump center must be a finite 6-vector, got {self.center}")
        object.__setattr__(self, "center", center)
        if not (self.radius_x > 0 and self.radius_v > 0):
            raise ValueError(
                f"bump radii must be positive, got r_x={self.radius_x}, r_v={self.radius_v}"
            )
        if self.amplitude < 0:
            raise ValueError(f"bump amplitude must be nonnegative, got {self.amplitude}")
        if int(self.exponent) != self.exponent or self.exponent < 3:
            raise ValueError(f"bump exponent must be an integer >= 3, got {self.exponent}")
        object.__setattr__(self, "exponent", int(self.exponent))

    @property
    def center_x(self) -> np.ndarray:
        return np.asarray(self.center[:3])

    @property
    def center_v(self) -> np.ndarray:
        return np.asarray(self.center[3:])

    def spatial_factor(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Amplitude times the x-factor and its x-gradient at points X of shape (N, 3)."""
        q, dq = self._factor(X, self.center_x, self.radius_x)
        return self.amplitude * q, self.amplitude * dq

    def velocity_factor(self, V: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """The v-factor and its v-gradient at points V of shape (N, 3)."""
        return self._factor(V, self.center_v, self.radius_v)

    def _factor(self, Y: np.ndarray, center: np.ndarray, radius: float):
        m = self.exponent
        offset = np.asarray(Y, dtype=float) - center
        base = 1.0 - np.sum(offset**2, axis=-1) / radius**2
        inside = base > 0
        base = np.where(inside, base, 0.0)
        value = base**m
        grad = (m * base ** (m - 1) * (-2.0 / radius**2))[..., None] * offset
        return value, np.where(inside[..., None], grad, 0.0)

    def value(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        fx, _ = self.spatial_factor(Z[..., :3])
        fv, _ = self.velocity_factor(Z[..., 3:])
        return fx * fv

    def gradient(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        fx, dfx = self.spatial_factor(Z[..., :3])
        fv, dfv = self.velocity_factor(Z[..., 3:])
        return np.concatenate([dfx * fv[..., None], fx[..., None] * dfv], axis=-1)

    def power_integral(self, p: float) -> float:
        """Integral of the p-th power of the bump over phase space."""
        m = self.exponent
        return (
            self.amplitude**p
            * _ball_power_integral(self.radius_x, p * m)
            * _ball_power_integral(self.radius_v, p * m)
        )

    def support_box(self) -> Tuple[np.ndarray, np.ndarray]:
        half = np.array([self.radius_x] * 3 + [self.radius_v] * 3)
        c = np.asarray(self.center)
        return c - half, c + half

    def support_radius(self) -> float:
        """Radius of the smallest origin-centered 6-ball containing the support."""
        reach_x = np.linalg.norm(self.center_x) + self.radius_x
        reach_v = np.linalg.norm(self.center_v) + self.radius_v
        return float(math.hypot(reach_x, reach_v))


def _cross_factor(c1, r1, c2, r2, m1, m2, n_nodes: int) -> float:
    """Integral of the product of two radial 3D factors by tensor Gauss-Legendre."""
    lo = np.maximum(c1 - r1, c2 - r2)
    hi = np.minimum(c1 + r1, c2 + r2)
    if np.any(hi <= lo) or np.linalg.norm(c1 - c2) >= r1 + r2:
        return 0.0
    nodes, weights = leggauss(n_nodes)
    axes = [0.5 * (hi[d] - lo[d]) * nodes + 0.5 * (hi[d] + lo[d]) for d in range(3)]
    axis_weights = [0.5 * (hi[d] - lo[d]) * weights for d in range(3)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    w = np.einsum("i,j,k->ijk", *axis_weights).ravel()
    b1 = np.clip(1.0 - np.sum((mesh - c1) ** 2, axis=1) / r1**2, 0.0, None)
    b2 = np.clip(1.0 - np.sum((mesh - c2) ** 2, axis=1) / r2**2, 0.0, None)
    return float(np.sum(w * b1**m1 * b2**m2))


@dataclass(frozen=True)
class BumpSum:
    """A finite sum of compact bumps; the empty sum is the zero datum."""

    bumps: Tuple[CompactBump, ...] = ()
    cross_nodes: int = 48

    def __post_init__(self):
        object.__setattr__(self, "bumps", tuple(self.bumps))

    @classmethod
    def of(cls, bumps: Sequence[CompactBump]) -> "BumpSum":
        return cls(bumps=tuple(bumps))

    @property
    def is_zero(self) -> bool:
        return all(b.amplitude == 0 for b in self.bumps)

    def value(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        out = np.zeros(Z.shape[:-1])
        for b in self.bumps:
            out = out + b.value(Z)
        return out

    def gradient(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        out = np.zeros(Z.shape)
        for b in self.bumps:
            out = out + b.gradient(Z)
        return out

    def integral(self) -> float:
        return float(sum(b.power_integral(1) for b in self.bumps))

    def l2_norm_squared(self) -> float:
        return self._l2_norm_squared

    @cached_property
    def _l2_norm_squared(self) -> float:
        """Squared L^2 norm: Beta-function closed form per bump plus overlap cross terms."""
        total = 0.0
        for i, a in enumerate(self.bumps):
            total += a.power_integral(2)
            for b in self.bumps[i + 1 :]:
                total += 2.0 * self._cross_term(a, b)
        return float(total)

    def _cross_term(self, a: CompactBump, b: CompactBump) -> float:
        if a.amplitude == 0 or b.amplitude == 0:
            return 0.0
        x_part = _cross_factor(
            a.center_x, a.radius_x, b.center_x, b.radius_x,
            a.exponent, b.exponent, self.cross_nodes,
        )
        if x_part == 0.0:
            return 0.0
        v_part = _cross_factor(
            a.center_v, a.radius_v, b.center_v, b.radius_v,
            a.exponent, b.exponent, self.cross_nodes,
        )
        return a.amplitude * b.amplitude * x_part * v_part

    def support_boxes(self):
        return [b.support_box() for b in self.bumps if b.amplitude > 0]

    def support_radius(self) -> float:
        radii = [b.support_radius() for b in self.bumps if b.amplitude > 0]
        return max(radii) if radii else 0.0


def eval_bump(b, z: PhaseInput) -> float:
    """Value of a bump (or bump sum) at a single phase point."""
    Z, _ = as_phase_array(z)
    return float(b.value(Z)[0])


def eval_bump_grad(b, z: PhaseInput) -> np.ndarray:
    """Analytic phase-space gradient of a bump (or bump sum) at a single point."""
    Z, _ = as_phase_array(z)
    return b.gradient(Z)[0]
