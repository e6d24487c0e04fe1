"""Damped fixed-point iteration on the optimality system.

Each sweep runs the state forward with B^k, the costate backward, and sets
B^{k+1} = (1 - theta) B^k + theta U(B^k), where U solves -lambda Delta B = -D
for the tracking density D = sum_p -omega_p (v_p x G^v_p) delta(x - x_p).
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import factorized
from tqdm import tqdm

from src.config import SHOW_PROGRESS
from src.core_model.phase_space import FieldGrid
from src.forward.control_field import ControlField
from src.forward.solver import TrajectoryStore
from src.kernels.softened import WeightedSource, eval_vector_newton
from src.logger import get_logger
from src.optimize.gradient import assemble_gradient, tracking_riesz
from src.optimize.problem import ControlProblem
from src.sensitivity.costate import CostateStore, check_alignment

logger = get_logger(__name__)

DIVERGENCE_FACTOR = 10.0


@dataclass(frozen=True, eq=False)
class FixedPointResult:
    control: ControlField
    history: pd.DataFrame
    status: str
    first_order_residual: Optional[float] = None


def _newton_update(
    traj: TrajectoryStore, costate: CostateStore, B: ControlField, lam: float
) -> ControlField:
    """-1/(4 pi lambda) times the Newton potential of the particle density, per knot."""
    weights = traj.ensemble.weights
    nodes = B.grid.node_coordinates()
    values = np.zeros(B.shape)
    for k, t in enumerate(B.knot_times):
        Z = traj.state_at(float(t))
        Gv = costate.velocity_gradients_at(float(t))
        density = -weights[:, None] * np.cross(Z[:, 3:], Gv)
        if not np.any(density):
            continue
        potential = eval_vector_newton(
            WeightedSource(Z[:, :3], density), nodes, traj.softening
        )
        values[k] = (-potential / (4.0 * np.pi * lam)).reshape(*B.grid.dims, 3)
    return B.with_values(values)


@lru_cache(maxsize=4)
def _dirichlet_solver(grid: FieldGrid):
    """Sparse LU of -Delta_h on the interior nodes with zero boundary data."""
    blocks = []
    for n, h in zip(grid.dims, grid.spacing):
        m = n - 2
        blocks.append(
            sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(m, m), format="csc") / h**2
        )
    eye = [sp.identity(n - 2, format="csc") for n in grid.dims]
    operator = (
        sp.kron(sp.kron(blocks[0], eye[1]), eye[2])
        + sp.kron(sp.kron(eye[0], blocks[1]), eye[2])
        + sp.kron(sp.kron(eye[0], eye[1]), blocks[2])
    )
    return factorized(operator.tocsc())


def _discrete_update(
    traj: TrajectoryStore, costate: CostateStore, B: ControlField, lam: float
) -> ControlField:
    """Zero-Dirichlet solve of -lambda Delta_h U = -R with R the tracking Riesz field."""
    riesz = tracking_riesz(traj, costate, B).values
    solve = _dirichlet_solver(B.grid)
    interior = tuple(n - 2 for n in B.grid.dims)
    values = np.zeros(B.shape)
    for k in range(B.grid.n_time_knots):
        for c in range(3):
            rhs = -riesz[k, 1:-1, 1:-1, 1:-1, c].ravel() / lam
            values[k, 1:-1, 1:-1, 1:-1, c] = solve(rhs).reshape(interior)
    return B.with_values(values)


def optimality_update(
    traj: TrajectoryStore,
    costate: CostateStore,
    B: ControlField,
    lam: float,
    formula: str = "newton",
) -> ControlField:
    """Field given by the optimality condition for a fixed state and costate.

    Args:
        traj: Forward run driven by B
        costate: Costate aligned with traj
        B: Current control, supplies the grid
        lam: Regularization weight, lambda > 0
        formula: "newton" for the softened free-space Newton potential at the
            nodes, "discrete" for the grid Poisson solve

    Returns:
        The updated control before damping
    """
    if not lam > 0:
        raise ValueError(f"run.lambda must be positive for the optimality update, got {lam}")
    check_alignment(traj, costate)
    if formula == "newton":
        return _newton_update(traj, costate, B, lam)
    if formula == "discrete":
        return _discrete_update(traj, costate, B, lam)
    raise ValueError(f"optimize.formula must be 'newton' or 'discrete', got {formula!r}")


def first_order_residual(
    traj: TrajectoryStore,
    costate: CostateStore,
    B: ControlField,
    lam: float,
    formula: str = "discrete",
) -> float:
    """Scaled residual of the first-order condition in the discretization of formula.

    "discrete": sup |grad J| over the larger of its tracking and regularization
    parts. "newton": sup |U(B) - B| over sup |U(B)|, U the Newton-potential
    update, which is the free-space form of -lambda Delta B = -D.
    """
    if formula == "newton":
        update = _newton_update(traj, costate, B, lam)
        scale = update.max_abs()
        if scale == 0.0:
            return B.max_abs()
        return (update - B).max_abs() / scale
    if formula != "discrete":
        raise ValueError(f"optimize.formula must be 'newton' or 'discrete', got {formula!r}")
    gradient = assemble_gradient(traj, costate, B, lam)
    scale = max(gradient.tracking.max_abs(), gradient.regularization.max_abs())
    if scale == 0.0:
        return 0.0
    return gradient.max_abs() / scale


def fixed_point_iterate(
    problem: ControlProblem,
    initial: ControlField,
    damping: float,
    max_iters: int,
    tol: float,
    formula: str = "newton",
) -> FixedPointResult:
    """Damped forward / backward / update sweeps until successive fields agree.

    The residual of a sweep is sup |B^{k+1} - B^k| over nodes and knots. The
    iteration stops as "converged" below tol, as "diverged" once the residual
    exceeds ten times the first one, and as "max_iters" otherwise.
    """
    lam = problem.run.lam
    if not lam > 0:
        raise ValueError(f"run.lambda must be positive for the fixed-point iteration, got {lam}")
    if not 0 < damping <= 1:
        raise ValueError(f"optimize.damping must lie in (0, 1], got {damping}")
    if max_iters < 1:
        raise ValueError(f"optimize.max_iters must be at least 1, got {max_iters}")

    B = initial
    rows: List[dict] = []
    status = "max_iters"
    first: Optional[float] = None
    previous: Optional[float] = None
    state: Optional[Tuple[TrajectoryStore, CostateStore]] = None
    for it in tqdm(range(1, max_iters + 1), desc="fixed point", disable=not SHOW_PROGRESS):
        traj = problem.forward(B)
        costate = problem.costate(traj, B)
        cost = problem.cost(traj, B)
        update = optimality_update(traj, costate, B, lam, formula)
        B_next = B * (1.0 - damping) + update * damping
        residual = (B_next - B).max_abs()
        ratio = residual / previous if previous else np.nan
        rows.append(
            {
                "iter": it,
                "J": cost.total,
                "tracking": cost.tracking,
                "reg": cost.regularization,
                "residual": residual,
                "ratio": ratio,
            }
        )
        logger.debug(f"Fixed-point sweep {it}: residual {residual:.3e}, ratio {ratio:.3f}")
        first = residual if first is None else first
        previous = residual
        B = B_next
        state = (traj, costate)
        if residual <= tol:
            status = "converged"
            break
        if residual > DIVERGENCE_FACTOR * first:
            status = "diverged"
            logger.warning(
                f"Fixed-point iteration diverged at sweep {it}: residual {residual:.3e} "
                f"exceeds {DIVERGENCE_FACTOR:g} x the first residual {first:.3e}"
            )
            break

    check = None
    if status == "converged":
        if rows[-1]["residual"] == 0.0:
            traj, costate = state
        else:
            traj = problem.forward(B)
            costate = problem.costate(traj, B)
        check = first_order_residual(traj, costate, B, lam, formula)
        logger.info(
            f"Fixed point converged in {len(rows)} sweeps; first-order residual {check:.3e}"
        )
    else:
        logger.info(f"Fixed-point iteration stopped with status {status}")
    return FixedPointResult(
        control=B,
        history=pd.DataFrame(rows),
        status=status,
        first_order_residual=check,
    )
