"""Discrete admissible-set norm ||B||_V = ||B||_W + ||B||_H and the ball retraction."""

import numpy as np

from src.core_model.phase_space import AdmissibleSpec
from src.forward.control_field import ControlField
from src.logger import get_logger

logger = get_logger(__name__)

_SLACK = 1e-12


def _shifted(values: np.ndarray, axis: int, offset: int) -> np.ndarray:
    """values[i + offset] along axis with zero padding."""
    pad = [(0, 0)] * values.ndim
    pad[axis] = (1, 1)
    padded = np.pad(values, pad)
    start = 1 + offset
    return np.take(padded, range(start, start + values.shape[axis]), axis=axis)


def _central(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (_shifted(values, axis, 1) - _shifted(values, axis, -1)) / (2.0 * h)


def _second(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (_shifted(values, axis, 1) - 2.0 * values + _shifted(values, axis, -1)) / h**2


def _forward(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (_shifted(values, axis, 1) - values) / h


def _power_sum(a: np.ndarray, beta: float) -> np.ndarray:
    """Per-knot sum of |a|^beta over nodes and components."""
    return np.sum(np.abs(a) ** beta, axis=(1, 2, 3, 4))


def w_norms(B: ControlField, beta: float) -> np.ndarray:
    """Per-knot grid W^{2,beta} norms from finite differences up to order two."""
    values = B.values
    spacing = B.grid.spacing
    total = _power_sum(values, beta)
    for j in range(3):
        total += _power_sum(_central(values, 1 + j, spacing[j]), beta)
        total += _power_sum(_second(values, 1 + j, spacing[j]), beta)
        for l in range(3):
            if l != j:
                mixed = _central(_central(values, 1 + l, spacing[l]), 1 + j, spacing[j])
                total += _power_sum(mixed, beta)
    return (B.grid.cell_volume * total) ** (1.0 / beta)


def h1_norms(B: ControlField) -> np.ndarray:
    """Per-knot grid H^1 norms with forward differences."""
    values = B.values
    total = _power_sum(values, 2.0)
    for j, h in enumerate(B.grid.spacing):
        total += _power_sum(_forward(values, 1 + j, h), 2.0)
    return np.sqrt(B.grid.cell_volume * total)


def discrete_V_norm(B: ControlField, beta: float) -> float:
    """L^2-in-time of the grid W^{2,beta} norm plus L^2-in-time of the grid H^1 norm.

    Args:
        B: Control field
        beta: Integrability exponent, beta > 3

    Returns:
        The nonnegative, absolutely homogeneous surrogate of ||B||_V
    """
    if not beta > 3:
        raise ValueError(f"admissible.beta must exceed 3, got {beta}")
    w = B.knot_weights
    w_part = np.sqrt(np.dot(w, w_norms(B, beta) ** 2))
    h_part = np.sqrt(np.dot(w, h1_norms(B) ** 2))
    return float(w_part + h_part)


def project_admissible(B: ControlField, spec: AdmissibleSpec) -> ControlField:
    """Radial retraction B * min(1, K / ||B||_V) onto the admissible ball."""
    norm = discrete_V_norm(B, spec.beta)
    if norm <= spec.K * (1.0 + _SLACK):
        return B
    logger.debug(f"Retracting control of V-norm {norm:.4e} onto the ball of radius {spec.K:g}")
    return B * (spec.K / norm)
