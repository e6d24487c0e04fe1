"""Flow-quality diagnostics and the transported target datum."""

from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from src.core_model.bumps import BumpSum
from src.core_model.phase_space import RunConfig
from src.forward.control_field import ControlField
from src.forward.ensemble import ParticleEnsemble, lp_norm
from src.forward.solver import TrajectoryStore, run_forward
from src.logger import get_logger

logger = get_logger(__name__)


def determinant_deviation(traj: TrajectoryStore, n: int) -> np.ndarray:
    """|det M_p(t_n) - 1| for every particle."""
    if traj.forward_jacobians is None:
        raise ValueError("trajectory was integrated without Jacobians")
    return np.abs(np.linalg.det(traj.forward_jacobians[n]) - 1.0)


def inverse_identity_deviation(traj: TrajectoryStore, n: int) -> float:
    """max_p |M_p N_p - I| at step n."""
    if not traj.has_jacobians:
        raise ValueError("trajectory was integrated without Jacobians")
    product = traj.forward_jacobians[n] @ traj.inverse_jacobians[n]
    return float(np.max(np.abs(product - np.eye(6))))


def flow_diagnostics_frame(traj: TrajectoryStore) -> pd.DataFrame:
    """Per-step diagnostics: support radius, L^p norms, det M drift, field sup."""
    ens = traj.ensemble
    rows = []
    l1, l2, linf = lp_norm(ens, 1), lp_norm(ens, 2), lp_norm(ens, np.inf)
    radii = traj.support_radii()
    for n, t in enumerate(traj.times):
        row = {
            "t": t,
            "support_radius": radii[n],
            "l1_norm": l1,
            "l2_norm": l2,
            "linf_norm": linf,
            "electric_sup": traj.electric_sup[n],
        }
        if traj.has_jacobians:
            dev = determinant_deviation(traj, n)
            row["det_dev_mean"] = float(np.mean(dev))
            row["det_dev_max"] = float(np.max(dev))
            row["mn_identity_dev"] = inverse_identity_deviation(traj, n)
        rows.append(row)
    return pd.DataFrame(rows)


class TransportedTarget:
    """The datum carried to the final time by a stored flow, f(T, z) = f0(Z(0, T, z)).

    Z(0, T, z) is the first-order Lagrangian remap around the particle q nearest
    to z at time T: z0_q + N_q(T) (z - z_q(T)). Values and gradients are exact at
    the particle positions, so a run tracking this target from its own control
    starts with zero tracking cost and zero costate.
    """

    def __init__(self, traj: TrajectoryStore, datum: BumpSum):
        if traj.inverse_jacobians is None:
            raise ValueError("transported target needs a trajectory with Jacobians")
        self.datum = datum
        self._initial = traj.ensemble.points
        self._final = traj.final_states
        self._inverse = traj.inverse_jacobians[-1]
        self._tree = cKDTree(self._final)
        self._norm_squared = traj.ensemble.l2_norm_squared()

    def pullback(self, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Remapped initial points and the Jacobians used for each query point."""
        Z = np.asarray(Z, dtype=float).reshape(-1, 6)
        _, nearest = self._tree.query(Z)
        offset = Z - self._final[nearest]
        jac = self._inverse[nearest]
        return self._initial[nearest] + np.einsum("nij,nj->ni", jac, offset), jac

    def value(self, Z: np.ndarray) -> np.ndarray:
        Z0, _ = self.pullback(Z)
        return self.datum.value(Z0)

    def gradient(self, Z: np.ndarray) -> np.ndarray:
        Z0, jac = self.pullback(Z)
        return np.einsum("ni,nij->nj", self.datum.gradient(Z0), jac)

    def l2_norm_squared(self) -> float:
        return self._norm_squared


def reconstructed_l2_norm(
    traj: TrajectoryStore,
    datum: BumpSum,
    spacing: Optional[float] = None,
    block_size: int = 100_000,
) -> float:
    """Grid estimate of ||f(T)||_2 from the remapped datum on a uniform 6D lattice.

    Args:
        traj: Forward run with Jacobians
        datum: Initial datum the ensemble was sampled from
        spacing: Lattice spacing, defaults to the sampling spacing
        block_size: Lattice points per remap batch

    Returns:
        The estimated L^2 norm at the final time
    """
    h = spacing or traj.ensemble.spacing
    target = TransportedTarget(traj, datum)
    lo = traj.final_states.min(axis=0) - h
    hi = traj.final_states.max(axis=0) + h
    axes = [np.arange(lo[d], hi[d] + 0.5 * h, h) for d in range(6)]
    shape = tuple(len(a) for a in axes)
    total = 0.0
    n_points = int(np.prod(shape))
    for start in range(0, n_points, block_size):
        flat = np.arange(start, min(start + block_size, n_points))
        idx = np.unravel_index(flat, shape)
        Z = np.stack([axes[d][idx[d]] for d in range(6)], axis=1)
        total += float(np.sum(target.value(Z) ** 2))
    logger.debug(f"Reconstructed L2 norm on {n_points} lattice points")
    return float(np.sqrt(total * h**6))


def lipschitz_study(
    ens: ParticleEnsemble,
    B: ControlField,
    H: ControlField,
    cfg: RunConfig,
    deltas: Sequence[float] = (1e-1, 1e-2, 1e-3),
) -> Tuple[pd.DataFrame, float]:
    """Final-state displacement under B + delta H and its log-log slope in delta."""
    base = run_forward(ens, B, cfg, with_jacobians=False).final_states
    rows = []
    for delta in deltas:
        perturbed = run_forward(ens, B.axpy(delta, H), cfg, with_jacobians=False)
        displacement = float(np.max(np.abs(perturbed.final_states - base)))
        rows.append({"delta": delta, "displacement": displacement})
    frame = pd.DataFrame(rows)
    slope = float(
        np.polyfit(np.log(frame["delta"]), np.log(frame["displacement"]), 1)[0]
    )
    logger.info(f"Lipschitz study slope {slope:.4f}")
    return frame, slope
