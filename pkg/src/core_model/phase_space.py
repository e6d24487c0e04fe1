"""Phase-space points, admissible-set parameters and run configuration."""

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple, Union

import numpy as np

from src.core_model.cutoff import CutoffSpec
from src.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class PhasePoint:
    """A single point z = (x, v) of phase space R^3 x R^3."""

    x: Tuple[float, float, float]
    v: Tuple[float, float, float]

    def __post_init__(self):
        x = tuple(float(c) for c in self.x)
        v = tuple(float(c) for c in self.v)
        if len(x) != 3 or len(v) != 3:
            raise ValueError("PhasePoint needs 3 position and 3 velocity components")
        if not all(math.isfinite(c) for c in x + v):
            raise ValueError(f"PhasePoint components must be finite, got x={x}, v={v}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    def as_array(self) -> np.ndarray:
        return np.array(self.x + self.v, dtype=float)

    @classmethod
    def from_array(cls, z) -> "PhasePoint":
        z = np.asarray(z, dtype=float).reshape(6)
        return cls(x=tuple(z[:3]), v=tuple(z[3:]))


PhaseInput = Union[PhasePoint, np.ndarray, list, tuple]


def as_phase_array(z: PhaseInput) -> Tuple[np.ndarray, bool]:
    """Normalize a phase point or a batch of them to an (N, 6) array.

    Returns:
        The (N, 6) array and a flag telling whether the input was a single point
    """
    if isinstance(z, PhasePoint):
        return z.as_array()[None, :], True
    arr = np.asarray(z, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != 6:
            raise ValueError(f"Expected a 6-vector, got shape {arr.shape}")
        return arr[None, :], True
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise ValueError(f"Expected an (N, 6) array of phase points, got {arr.shape}")
    return arr, False


@dataclass(frozen=True)
class AdmissibleSpec:
    """Parameters of the admissible ball ||B||_V <= K."""

    K: float
    beta: float

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError(f"admissible.K must be positive, got {self.K}")
        if not self.beta > 3:
            raise ValueError(f"admissible.beta must exceed 3, got {self.beta}")

    @property
    def holder_exponent(self) -> float:
        return 1.0 - 3.0 / self.beta


@dataclass(frozen=True)
class FieldGrid:
    """Space-time grid carrying the magnetic control."""

    origin: Tuple[float, float, float]
    spacing: Tuple[float, float, float]
    dims: Tuple[int, int, int]
    n_time_knots: int

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))
        object.__setattr__(self, "spacing", tuple(float(c) for c in self.spacing))
        object.__setattr__(self, "dims", tuple(int(c) for c in self.dims))
        if len(self.origin) != 3 or len(self.spacing) != 3 or len(self.dims) != 3:
            raise ValueError("field_grid origin, spacing and dims need 3 entries each")
        if any(h <= 0 for h in self.spacing):
            raise ValueError(f"field_grid.spacing must be positive, got {self.spacing}")
        if any(n < 3 for n in self.dims):
            raise ValueError(f"field_grid.dims must be at least 3, got {self.dims}")
        if self.n_time_knots < 2:
            raise ValueError(
                f"field_grid.n_time_knots must be at least 2, got {self.n_time_knots}"
            )

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.spacing) * (
            np.asarray(self.dims) - 1
        )

    def node_coordinates(self) -> np.ndarray:
        """All node positions, shape (nx*ny*nz, 3) in C order."""
        axes = [
            self.origin[d] + self.spacing[d] * np.arange(self.dims[d]) for d in range(3)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def covers_ball(self, radius: float) -> bool:
        """Whether the interior of the grid box contains the centered ball B_radius."""
        lo = self.lower + np.asarray(self.spacing)
        hi = self.upper - np.asarray(self.spacing)
        return bool(np.all(lo <= -radius) and np.all(hi >= radius))


@dataclass(frozen=True)
class RunConfig:
    """All numerical and physical parameters of a forward/adjoint run."""

    T: float
    dt: float
    softening: float
    sample_spacing: float
    field_grid: FieldGrid
    weight_floor: float = 0.0
    lam: float = 0.0
    admissible: AdmissibleSpec = field(default_factory=lambda: AdmissibleSpec(1.0, 4.0))
    cutoff: Optional[CutoffSpec] = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"run.T must be positive, got {self.T}")
        if not self.dt > 0:
            raise ValueError(f"run.dt must be positive, got {self.dt}")
        if self.softening < 0:
            raise ValueError(f"run.softening must be nonnegative, got {self.softening}")
        if not self.sample_spacing > 0:
            raise ValueError(
                f"run.sample_spacing must be positive, got {self.sample_spacing}"
            )
        if self.weight_floor < 0:
            raise ValueError(
                f"run.weight_floor must be nonnegative, got {self.weight_floor}"
            )
        if self.lam < 0:
            raise ValueError(f"run.lambda must be nonnegative, got {self.lam}")
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"run.dt={self.dt} does not divide run.T={self.T}")
        knot_gap = self.T / (self.field_grid.n_time_knots - 1)
        per_knot = knot_gap / self.dt
        if abs(per_knot - round(per_knot)) > 1e-9 * max(1.0, per_knot):
            logger.warning(
                f"Time knots (spacing {knot_gap:g}) are not aligned with the step grid "
                f"(dt={self.dt:g}); time integrals lose accuracy at the knots"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def with_updates(self, **changes) -> "RunConfig":
        return replace(self, **changes)
