"""Projected gradient descent with Armijo backtracking on the admissible ball."""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.config import (
    DEFAULT_ARMIJO,
    DEFAULT_BACKTRACK,
    DEFAULT_DAMPING,
    DEFAULT_MAX_FIELD_STEP,
    DEFAULT_MAX_ITERS,
    DEFAULT_STEP_SIZE,
    DEFAULT_TOLERANCE,
    MAX_LINE_SEARCH_TRIALS,
    SHOW_PROGRESS,
)
from src.core_model.phase_space import AdmissibleSpec
from src.forward.control_field import ControlField
from src.logger import get_logger
from src.optimize.admissible import discrete_V_norm, project_admissible
from src.optimize.gradient import random_direction
from src.optimize.problem import ControlProblem, Evaluation

logger = get_logger(__name__)

HISTORY_COLUMNS = ["iter", "J", "tracking", "reg", "grad_norm", "step", "residual"]


@dataclass(frozen=True)
class OptimizeConfig:
    """Step control of the descent and damping of the fixed-point iteration."""

    step_size: float = DEFAULT_STEP_SIZE
    armijo: float = DEFAULT_ARMIJO
    backtrack: float = DEFAULT_BACKTRACK
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOLERANCE
    damping: float = DEFAULT_DAMPING
    max_field_step: Optional[float] = DEFAULT_MAX_FIELD_STEP
    formula: str = "newton"

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"optimize.step_size must be positive, got {self.step_size}")
        if not 0 < self.armijo < 1:
            raise ValueError(f"optimize.armijo must lie in (0, 1), got {self.armijo}")
        if not 0 < self.backtrack < 1:
            raise ValueError(f"optimize.backtrack must lie in (0, 1), got {self.backtrack}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(
                f"optimize.max_iters must be a positive integer, got {self.max_iters}"
            )
        if self.tol < 0:
            raise ValueError(f"optimize.tol must be nonnegative, got {self.tol}")
        if not 0 < self.damping <= 1:
            raise ValueError(f"optimize.damping must lie in (0, 1], got {self.damping}")
        if self.max_field_step is not None and not self.max_field_step > 0:
            raise ValueError(
                f"optimize.max_field_step must be positive, got {self.max_field_step}"
            )
        if self.formula not in ("newton", "discrete"):
            raise ValueError(
                f"optimize.formula must be 'newton' or 'discrete', got {self.formula!r}"
            )


@dataclass(frozen=True, eq=False)
class DescentResult:
    control: ControlField
    history: pd.DataFrame
    status: str
    evaluation: Evaluation
    variation_check: Optional[float] = None


def _history_row(it: int, ev: Evaluation, step: float, residual: float) -> dict:
    return {
        "iter": it,
        "J": ev.cost.total,
        "tracking": ev.cost.tracking,
        "reg": ev.cost.regularization,
        "grad_norm": ev.gradient.norm(),
        "step": step,
        "residual": residual,
    }


def variation_inequality_check(
    ev: Evaluation,
    spec: AdmissibleSpec,
    samples: int = 4,
    seed: int = 0,
) -> float:
    """min over sampled admissible B of <J'(B_bar), B - B_bar>.

    Samples are retractions of B_bar plus scaled smooth random directions. A
    negative value means a sampled feasible descent direction exists.
    """
    B_bar = ev.control
    rng = np.random.default_rng(seed)
    scale = max(B_bar.max_abs(), 1.0)
    values = []
    for _ in range(samples):
        H = random_direction(B_bar.grid, B_bar.final_time, rng)
        candidate = project_admissible(B_bar.axpy(scale, H), spec)
        values.append(ev.gradient.pair(candidate - B_bar))
    return float(min(values))


def run_projected_gd(
    problem: ControlProblem,
    initial: ControlField,
    config: OptimizeConfig,
    spec: Optional[AdmissibleSpec] = None,
) -> DescentResult:
    """Projected gradient descent B <- P(B - alpha grad J) with Armijo backtracking.

    A trial is accepted when J does not increase and the Armijo condition
    J(B_new) <= J(B) + c1 <grad J, B_new - B> holds. The first trial step is
    capped so that the field changes by at most max_field_step per node.

    Args:
        problem: The control problem
        initial: Admissible starting control
        config: Step and stopping parameters
        spec: Admissible ball, defaults to the run's

    Returns:
        Final control, iterate history and termination status, one of
        "stationary", "converged", "max_iters", "line_search_failed"
    """
    spec = spec or problem.run.admissible
    norm = discrete_V_norm(initial, spec.beta)
    if norm > spec.K * (1.0 + 1e-12):
        raise ValueError(
            f"initial control has V-norm {norm:.4e} above admissible.K={spec.K:g}"
        )
    logger.info(f"Projected gradient descent from a control of V-norm {norm:.4e}")

    ev = problem.evaluate(initial)
    rows: List[dict] = [_history_row(0, ev, 0.0, 0.0)]
    status = "max_iters"
    for it in tqdm(
        range(1, config.max_iters + 1), desc="descent", disable=not SHOW_PROGRESS
    ):
        gradient = ev.gradient
        if gradient.norm() <= config.tol:
            status = "stationary"
            logger.info(f"Stationary point: gradient norm {gradient.norm():.3e}")
            break
        step = config.step_size
        if config.max_field_step is not None:
            step = min(step, config.max_field_step / gradient.max_abs())
        B = ev.control
        current = ev.cost.total
        accepted = None
        for trial in range(MAX_LINE_SEARCH_TRIALS):
            candidate = project_admissible(B.axpy(-step, gradient.total), spec)
            value = problem.objective(candidate)
            slope = gradient.pair(candidate - B)
            if value <= current and value <= current + config.armijo * slope:
                accepted = candidate
                break
            logger.debug(f"Iteration {it}: trial {trial} step {step:.3e} gave J={value:.6e}")
            step *= config.backtrack
        if accepted is None:
            status = "line_search_failed"
            logger.warning(
                f"Line search failed after {MAX_LINE_SEARCH_TRIALS} trials at iteration {it}"
            )
            break
        residual = (accepted - B).max_abs()
        ev = problem.evaluate(accepted)
        rows.append(_history_row(it, ev, step, residual))
        decrease = (current - ev.cost.total) / max(abs(current), np.finfo(float).tiny)
        logger.info(f"Iteration {it}: J={ev.cost.total:.6e}, relative decrease {decrease:.3e}")
        if decrease < config.tol:
            status = "converged"
            break

    variation = None
    final_norm = discrete_V_norm(ev.control, spec.beta)
    if final_norm >= spec.K * (1.0 - 1e-9):
        variation = variation_inequality_check(ev, spec)
        logger.info(f"Final iterate on the admissible boundary; variation check {variation:.4e}")
    logger.info(f"Descent finished with status {status} after {len(rows) - 1} steps")
    return DescentResult(
        control=ev.control,
        history=pd.DataFrame(rows, columns=HISTORY_COLUMNS),
        status=status,
        evaluation=ev,
        variation_check=variation,
    )
