"""Radial C^2 cutoff function multiplying the costate source."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CutoffSpec:
    """chi(z) = 1 on |z| <= R1, 0 on |z| >= R2, quintic radial blend in between."""

    inner_radius: float
    outer_radius: float

    def __post_init__(self):
        if not 0 < self.inner_radius < self.outer_radius:
            raise ValueError(
                "cutoff radii must satisfy 0 < inner_radius < outer_radius, got "
                f"{self.inner_radius}, {self.outer_radius}"
            )

    @classmethod
    def from_support(cls, radius: float, factor: float = 2.0) -> "CutoffSpec":
        """Cutoff equal to one on B_radius and vanishing outside B_{factor*radius}."""
        return cls(inner_radius=float(radius), outer_radius=float(factor * radius))

    def _blend(self, Z: np.ndarray):
        r = np.linalg.norm(Z, axis=-1)
        s = np.clip(
            (r - self.inner_radius) / (self.outer_radius - self.inner_radius), 0.0, 1.0
        )
        return r, s

    def value(self, Z: np.ndarray) -> np.ndarray:
        _, s = self._blend(np.asarray(Z, dtype=float))
        return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)

    def gradient(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        r, s = self._blend(Z)
        dchi_ds = -30.0 * s**2 * (1.0 - s) ** 2
        radial = dchi_ds / (self.outer_radius - self.inner_radius)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, Z / r[..., None], 0.0)
        return radial[..., None] * unit


def eval_cutoff(c: CutoffSpec, z) -> float:
    """Value of the cutoff at a single phase point."""
    from src.core_model.phase_space import as_phase_array

    Z, _ = as_phase_array(z)
    return float(c.value(Z)[0])


def eval_cutoff_grad(c: CutoffSpec, z) -> np.ndarray:
    """Gradient of the cutoff at a single phase point."""
    from src.core_model.phase_space import as_phase_array

    Z, _ = as_phase_array(z)
    return c.gradient(Z)[0]
