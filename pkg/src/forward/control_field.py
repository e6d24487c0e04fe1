"""Magnetic control on a space-time grid.

Node values have shape (n_knots, nx, ny, nz, 3). Interpolation is trilinear in
space and linear in time, zero outside the grid box; the outermost node layer
is held at zero. Cloud-in-cell deposition is the transpose of the spatial
interpolation.
"""

from typing import Callable, Optional, Tuple

import numpy as np

from src.core_model.phase_space import FieldGrid
from src.logger import get_logger

logger = get_logger(__name__)

_CORNERS = np.array([(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)])


class ControlField:
    """Magnetic field B(t, x) sampled at grid nodes and time knots."""

    def __init__(
        self, grid: FieldGrid, final_time: float, values: Optional[np.ndarray] = None
    ):
        if not final_time > 0:
            raise ValueError(f"final_time must be positive, got {final_time}")
        self.grid = grid
        self.final_time = float(final_time)
        self.knot_times = np.linspace(0.0, self.final_time, grid.n_time_knots)
        shape = self.shape
        if values is None:
            values = np.zeros(shape)
        values = np.array(values, dtype=float)
        if values.shape != shape:
            raise ValueError(f"control values must have shape {shape}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("control values must be finite")
        self.values = values * self.interior_mask()[None, :, :, :, None]

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.grid.n_time_knots, *self.grid.dims, 3)

    # Construction helpers

    @classmethod
    def zeros(cls, grid: FieldGrid, final_time: float) -> "ControlField":
        return cls(grid, final_time)

    @classmethod
    def uniform(cls, grid: FieldGrid, final_time: float, b) -> "ControlField":
        """Constant vector b on every interior node at every knot."""
        values = np.broadcast_to(
            np.asarray(b, dtype=float), (grid.n_time_knots, *grid.dims, 3)
        )
        return cls(grid, final_time, values)

    @classmethod
    def from_function(
        cls,
        grid: FieldGrid,
        final_time: float,
        fn: Callable[[float, np.ndarray], np.ndarray],
    ) -> "ControlField":
        """Sample fn(t, X) -> (N, 3) at every node and knot."""
        nodes = grid.node_coordinates()
        knots = np.linspace(0.0, final_time, grid.n_time_knots)
        values = np.stack(
            [np.asarray(fn(t, nodes)).reshape(*grid.dims, 3) for t in knots]
        )
        return cls(grid, final_time, values)

    def with_values(self, values: np.ndarray) -> "ControlField":
        return ControlField(self.grid, self.final_time, values)

    def copy(self) -> "ControlField":
        return self.with_values(self.values)

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.dims)
        mask[1:-1, 1:-1, 1:-1] = 1.0
        return mask

    # Arithmetic

    def _check_compatible(self, other: "ControlField") -> None:
        if other.grid != self.grid or other.final_time != self.final_time:
            raise ValueError("control fields live on different grids")

    def __add__(self, other: "ControlField") -> "ControlField":
        self._check_compatible(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "ControlField") -> "ControlField":
        self._check_compatible(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar: float) -> "ControlField":
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "ControlField":
        return self * -1.0

    def axpy(self, alpha: float, other: "ControlField") -> "ControlField":
        """self + alpha * other."""
        self._check_compatible(other)
        return self.with_values(self.values + alpha * other.values)

    # Grid quadrature

    @property
    def knot_weights(self) -> np.ndarray:
        """Trapezoid weights of the time knots."""
        gap = self.final_time / (self.grid.n_time_knots - 1)
        w = np.full(self.grid.n_time_knots, gap)
        w[0] = w[-1] = 0.5 * gap
        return w

    def inner(self, other: "ControlField") -> float:
        """sum_k w_k dV sum_nodes B_k . H_k."""
        self._check_compatible(other)
        per_knot = np.einsum("kxyzc,kxyzc->k", self.values, other.values)
        return float(self.grid.cell_volume * np.dot(self.knot_weights, per_knot))

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def _padded_differences(self):
        padded = np.pad(self.values, ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))
        return [np.diff(padded, axis=1 + d) / self.grid.spacing[d] for d in range(3)]

    def gradient_energy(self) -> float:
        """1/2 sum_k w_k dV sum_edges |D_h B|^2 over forward differences with zero padding."""
        per_knot = sum(
            np.einsum("kxyzc,kxyzc->k", diff, diff) for diff in self._padded_differences()
        )
        return float(0.5 * self.grid.cell_volume * np.dot(self.knot_weights, per_knot))

    def gradient_pairing(self, other: "ControlField") -> float:
        """<D_h B, D_h H> in the grid inner product."""
        self._check_compatible(other)
        per_knot = sum(
            np.einsum("kxyzc,kxyzc->k", a, b)
            for a, b in zip(self._padded_differences(), other._padded_differences())
        )
        return float(self.grid.cell_volume * np.dot(self.knot_weights, per_knot))

    def laplacian(self) -> np.ndarray:
        """7-point discrete Laplacian with zero Dirichlet data outside the grid."""
        padded = np.pad(self.values, ((0, 0), (1, 1), (1, 1), (1, 1), (0, 0)))
        centre = padded[:, 1:-1, 1:-1, 1:-1]
        lap = np.zeros_like(self.values)
        for d, h in enumerate(self.grid.spacing):
            lo = [slice(None), slice(1, -1), slice(1, -1), slice(1, -1)]
            hi = list(lo)
            lo[1 + d] = slice(0, -2)
            hi[1 + d] = slice(2, None)
            lap += (padded[tuple(lo)] - 2.0 * centre + padded[tuple(hi)]) / h**2
        return lap

    # Interpolation

    def _time_weights(self, t: float) -> Tuple[int, float]:
        gap = self.final_time / (self.grid.n_time_knots - 1)
        u = np.clip(t / gap, 0.0, self.grid.n_time_knots - 1)
        k = min(int(np.floor(u)), self.grid.n_time_knots - 2)
        return k, float(u - k)

    def time_slice(self, t: float) -> np.ndarray:
        k, s = self._time_weights(t)
        return (1.0 - s) * self.values[k] + s * self.values[k + 1]

    def _cell_weights(self, X: np.ndarray):
        """Corner indices, trilinear weights and their x-derivatives for points X."""
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        spacing = np.asarray(self.grid.spacing)
        u = (X - self.grid.lower) / spacing
        dims = np.asarray(self.grid.dims)
        base = np.floor(u).astype(int)
        inside = np.all((base >= 0) & (base <= dims - 2), axis=1)
        base = np.where(inside[:, None], base, 0)
        frac = np.where(inside[:, None], u - base, 0.0)

        # per-axis weights: index 0 -> (1 - f), index 1 -> f
        axis_w = np.stack([1.0 - frac, frac], axis=1)  # (N, 2, 3)
        axis_dw = np.stack(
            [-np.ones_like(frac), np.ones_like(frac)], axis=1
        ) / spacing  # (N, 2, 3)

        n = X.shape[0]
        weights = np.ones((n, 8))
        dweights = np.ones((n, 8, 3))
        for c, corner in enumerate(_CORNERS):
            for d in range(3):
                w_d = axis_w[:, corner[d], d]
                weights[:, c] *= w_d
                for j in range(3):
                    dweights[:, c, j] *= axis_dw[:, corner[d], d] if j == d else w_d
        weights *= inside[:, None]
        dweights *= inside[:, None, None]
        indices = base[:, None, :] + _CORNERS[None, :, :]  # (N, 8, 3)
        return indices, weights, dweights

    def __call__(self, t: float, X: np.ndarray) -> np.ndarray:
        """B(t, X) for points X of shape (N, 3)."""
        values = self.time_slice(t)
        idx, w, _ = self._cell_weights(X)
        corner_values = values[idx[..., 0], idx[..., 1], idx[..., 2]]  # (N, 8, 3)
        return np.einsum("nc,ncd->nd", w, corner_values)

    def jacobian(self, t: float, X: np.ndarray) -> np.ndarray:
        """dB_i/dx_j at points X, shape (N, 3, 3); piecewise constant per cell."""
        values = self.time_slice(t)
        idx, _, dw = self._cell_weights(X)
        corner_values = values[idx[..., 0], idx[..., 1], idx[..., 2]]
        return np.einsum("ncj,nci->nij", dw, corner_values)

    def deposit(self, X: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Cloud-in-cell deposition of vector weights W (N, 3) onto the nodes."""
        idx, w, _ = self._cell_weights(X)
        out = np.zeros((*self.grid.dims, 3))
        contrib = w[:, :, None] * np.asarray(W, dtype=float)[:, None, :]
        np.add.at(
            out,
            (idx[..., 0].ravel(), idx[..., 1].ravel(), idx[..., 2].ravel()),
            contrib.reshape(-1, 3),
        )
        return out

    def time_hat_weights(self, t: float) -> Tuple[int, float, float]:
        """Knot index k and the hat-function weights of knots k and k+1 at time t."""
        k, s = self._time_weights(t)
        return k, 1.0 - s, s

    def contains(self, X: np.ndarray) -> np.ndarray:
        """Whether points lie inside the grid box."""
        X = np.asarray(X, dtype=float).reshape(-1, 3)
        return np.all((X >= self.grid.lower) & (X <= self.grid.upper), axis=1)

    def __repr__(self) -> str:
        return (
            f"ControlField(dims={self.grid.dims}, knots={self.grid.n_time_knots}, "
            f"T={self.final_time}, max|B|={self.max_abs():.3e})"
        )
