"""Adjoint gradient assembly and the finite-difference / tangent cross-checks."""

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.core_model.phase_space import FieldGrid
from src.forward.control_field import ControlField
from src.forward.solver import TrajectoryStore
from src.logger import get_logger
from src.sensitivity.costate import CostateStore, check_alignment
from src.sensitivity.tangent import run_tangent, tangent_pairing

if TYPE_CHECKING:
    from src.optimize.problem import ControlProblem, Evaluation

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class GradientField:
    """Grid Riesz representative of J'(B), split into its two parts."""

    total: ControlField
    tracking: ControlField
    regularization: ControlField

    def pair(self, H: ControlField) -> float:
        """<grad J, H> in the grid inner product, the adjoint value of J'(B)[H]."""
        return self.total.inner(H)

    def norm(self) -> float:
        return self.total.norm()

    def max_abs(self) -> float:
        return self.total.max_abs()


def _simpson_nodes(times: np.ndarray) -> List[Tuple[float, float]]:
    """(time, weight) pairs of the composite Simpson rule on the step grid."""
    dt = float(times[1] - times[0])
    nodes = []
    for n, t in enumerate(times):
        end = n == 0 or n == len(times) - 1
        nodes.append((float(t), dt / 6.0 if end else dt / 3.0))
    for n in range(len(times) - 1):
        nodes.append((float(times[n] + 0.5 * dt), 2.0 * dt / 3.0))
    return nodes


def tracking_riesz(
    traj: TrajectoryStore, costate: CostateStore, B: ControlField
) -> ControlField:
    """Riesz representative of the tracking part of J'(B).

    The v-integral int (v x H) . d_v f g dv is moved onto the costate by parts,
    giving the pairing int_0^T sum_p -omega_p (v_p x G^v_p) . H(t, x_p) dt. Each
    time sample is deposited cloud-in-cell onto the nodes and spread over the
    two neighbouring knots with the hat-function weights.
    """
    check_alignment(traj, costate)
    weights = traj.ensemble.weights
    dual = np.zeros(B.shape)
    for t, w in _simpson_nodes(traj.times):
        Z = traj.state_at(t)
        Gv = costate.velocity_gradients_at(t)
        density = -weights[:, None] * np.cross(Z[:, 3:], Gv)
        deposited = B.deposit(Z[:, :3], density)
        k, a, b = B.time_hat_weights(t)
        dual[k] += w * a * deposited
        dual[k + 1] += w * b * deposited
    scale = B.knot_weights * B.grid.cell_volume
    return B.with_values(dual / scale[:, None, None, None, None])


def assemble_gradient(
    traj: TrajectoryStore, costate: CostateStore, B: ControlField, lam: float
) -> GradientField:
    """Grid gradient of J at B: -lambda Delta_h B plus the deposited tracking part.

    Args:
        traj: Forward run driven by B
        costate: Costate aligned with traj
        B: The control
        lam: Regularization weight

    Returns:
        Total, tracking and regularization parts of the gradient

    Raises:
        StoreAlignmentError: costate and trajectory do not match
    """
    if lam < 0:
        raise ValueError(f"run.lambda must be nonnegative, got {lam}")
    tracking = tracking_riesz(traj, costate, B)
    regularization = B.with_values(-lam * B.laplacian())
    total = tracking + regularization
    logger.debug(
        f"Gradient assembled: |tracking|={tracking.norm():.4e}, "
        f"|regularization|={regularization.norm():.4e}"
    )
    return GradientField(total=total, tracking=tracking, regularization=regularization)


def fd_directional(
    B: ControlField,
    H: ControlField,
    delta: float,
    evaluator: Callable[[ControlField], float],
) -> float:
    """Central difference (J(B + delta H) - J(B - delta H)) / (2 delta)."""
    if not delta > 0:
        raise ValueError(f"gradcheck.delta must be positive, got {delta}")
    if H.max_abs() == 0.0:
        return 0.0
    plus = evaluator(B.axpy(delta, H))
    minus = evaluator(B.axpy(-delta, H))
    return (plus - minus) / (2.0 * delta)


def sine_mode(
    grid: FieldGrid,
    final_time: float,
    mode: Sequence[int],
    component: int,
    time_profile: Callable[[np.ndarray], np.ndarray] = np.ones_like,
) -> ControlField:
    """Discrete Dirichlet sine mode prod_d sin(pi m_d i_d / (n_d - 1)) in one component.

    These are eigenvectors of the 7-point Laplacian with zero boundary data.
    """
    axes = [
        np.sin(np.pi * mode[d] * np.arange(grid.dims[d]) / (grid.dims[d] - 1))
        for d in range(3)
    ]
    spatial = np.einsum("i,j,k->ijk", *axes)
    knots = np.linspace(0.0, final_time, grid.n_time_knots)
    values = np.zeros((grid.n_time_knots, *grid.dims, 3))
    values[..., component] = time_profile(knots)[:, None, None, None] * spatial
    return ControlField(grid, final_time, values)


def sine_symbol(grid: FieldGrid, mode: Sequence[int]) -> float:
    """Eigenvalue of -Delta_h on sine_mode(mode)."""
    return float(
        sum(
            4.0 / grid.spacing[d] ** 2 * np.sin(0.5 * np.pi * mode[d] / (grid.dims[d] - 1)) ** 2
            for d in range(3)
        )
    )


def random_direction(
    grid: FieldGrid, final_time: float, rng: np.random.Generator, max_mode: int = 2
) -> ControlField:
    """Smooth random direction: random combination of low sine modes, max |H| = 1."""
    values = np.zeros((grid.n_time_knots, *grid.dims, 3))
    for mode in np.ndindex(max_mode, max_mode, max_mode):
        mode = tuple(m + 1 for m in mode)
        for component in range(3):
            coefficients = rng.standard_normal(grid.n_time_knots)
            shape = sine_mode(grid, final_time, mode, component)
            values += coefficients[:, None, None, None, None] * shape.values
    peak = float(np.max(np.abs(values)))
    if peak > 0:
        values /= peak
    return ControlField(grid, final_time, values)


def relative_error(a: float, b: float) -> float:
    """|a - b| / max(|a|, |b|), zero when both vanish."""
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def gradient_check(
    problem: "ControlProblem",
    B: ControlField,
    directions: Iterable[ControlField],
    delta: float,
    evaluation: Optional["Evaluation"] = None,
) -> pd.DataFrame:
    """Three-way comparison of J'(B)[H]: adjoint, tangent and central differences.

    Args:
        problem: The control problem
        B: Point of evaluation
        directions: Control directions H
        delta: Finite-difference step
        evaluation: Reuse an existing evaluation at B

    Returns:
        One row per direction with the three values, their tracking parts and
        the pairwise relative errors
    """
    evaluation = evaluation or problem.evaluate(B)
    traj = evaluation.trajectory
    lam = problem.run.lam
    rows = []
    for i, H in enumerate(directions):
        regularization = lam * B.gradient_pairing(H) if lam > 0 else 0.0
        adjoint_tracking = evaluation.gradient.tracking.inner(H)
        adjoint = evaluation.gradient.pair(H)
        tangent_tracking = tangent_pairing(
            traj, run_tangent(traj, B, H), problem.target
        )
        tangent = tangent_tracking + regularization
        fd = fd_directional(B, H, delta, problem.objective)
        fd_tracking = fd - regularization
        row = {
            "direction": i,
            "adjoint": adjoint,
            "tangent": tangent,
            "fd": fd,
            "adjoint_tracking": adjoint_tracking,
            "tangent_tracking": tangent_tracking,
            "fd_tracking": fd_tracking,
            "rel_adjoint_fd": relative_error(adjoint, fd),
            "rel_adjoint_tangent": relative_error(adjoint, tangent),
            "rel_tangent_fd": relative_error(tangent, fd),
        }
        logger.info(
            f"Direction {i}: adjoint {adjoint:.6e}, tangent {tangent:.6e}, fd {fd:.6e}"
        )
        rows.append(row)
    return pd.DataFrame(rows)


def taylor_table(
    problem: "ControlProblem",
    B: ControlField,
    H: ControlField,
    evaluation: "Evaluation",
    deltas: Sequence[float] = (1e-1, 5e-2, 2.5e-2, 1.25e-2),
) -> pd.DataFrame:
    """Taylor remainders |J(B + d H) - J(B)| and |J(B + d H) - J(B) - d <grad J, H>|."""
    base = evaluation.cost.total
    slope = evaluation.gradient.pair(H)
    rows = []
    for delta in deltas:
        value = problem.objective(B.axpy(delta, H))
        rows.append(
            {
                "delta": delta,
                "remainder_zero": abs(value - base),
                "remainder_first": abs(value - base - delta * slope),
            }
        )
    frame = pd.DataFrame(rows)
    positive = frame["remainder_first"] > 0
    if positive.sum() >= 2:
        order = np.polyfit(
            np.log(frame.loc[positive, "delta"]),
            np.log(frame.loc[positive, "remainder_first"]),
            1,
        )[0]
        logger.info(f"Taylor remainder order {order:.3f}")
    return frame
