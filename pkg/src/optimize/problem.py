"""The control problem: forward run, costate and gradient wired together."""

from dataclasses import dataclass

from src.core_model.bumps import BumpSum, TargetDatum
from src.core_model.phase_space import RunConfig
from src.forward.control_field import ControlField
from src.forward.diagnostics import TransportedTarget
from src.forward.ensemble import ParticleEnsemble, sample_ensemble
from src.forward.solver import TrajectoryStore, run_forward
from src.logger import get_logger
from src.optimize.cost import CostBreakdown, eval_cost
from src.optimize.gradient import GradientField, assemble_gradient
from src.sensitivity.costate import CostateStore, run_backward

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class Evaluation:
    """Everything computed for one control: run, costate, cost and gradient."""

    control: ControlField
    trajectory: TrajectoryStore
    costate: CostateStore
    cost: CostBreakdown
    gradient: GradientField


class ControlProblem:
    """Minimize 1/2 ||f_B(T) - f_d||^2 + lambda/2 ||D_x B||^2 over the control B."""

    def __init__(
        self,
        ensemble: ParticleEnsemble,
        target: TargetDatum,
        run: RunConfig,
        self_field: bool = True,
    ):
        self.ensemble = ensemble
        self.target = target
        self.run = run
        self.self_field = self_field
        self.target_norm_sq = target.l2_norm_squared()

    @classmethod
    def from_datum(
        cls,
        datum: BumpSum,
        target: TargetDatum,
        run: RunConfig,
        self_field: bool = True,
    ) -> "ControlProblem":
        """Sample the initial datum with the run's spacing and weight floor."""
        ensemble = sample_ensemble(datum, run.sample_spacing, run.weight_floor)
        return cls(ensemble, target, run, self_field)

    @classmethod
    def transported(
        cls,
        ensemble: ParticleEnsemble,
        datum: BumpSum,
        control: ControlField,
        run: RunConfig,
        self_field: bool = True,
    ) -> "ControlProblem":
        """Problem whose target is the datum carried to time T by `control`.

        The control is then optimal for the tracking part.
        """
        traj = run_forward(ensemble, control, run, self_field=self_field)
        return cls(ensemble, TransportedTarget(traj, datum), run, self_field)

    def forward(self, B: ControlField, with_jacobians: bool = True) -> TrajectoryStore:
        return run_forward(
            self.ensemble,
            B,
            self.run,
            self_field=self.self_field,
            with_jacobians=with_jacobians,
        )

    def cost(self, traj: TrajectoryStore, B: ControlField) -> CostBreakdown:
        return eval_cost(traj, B, self.target, self.run.lam, self.target_norm_sq)

    def objective(self, B: ControlField) -> float:
        """J(B) from a fresh forward run without Jacobians."""
        return self.cost(self.forward(B, with_jacobians=False), B).total

    def costate(
        self, traj: TrajectoryStore, B: ControlField, cutoff=None
    ) -> CostateStore:
        return run_backward(traj, B, self.target, cutoff=cutoff or self.run.cutoff)

    def evaluate(self, B: ControlField, cutoff=None) -> Evaluation:
        """Forward run, costate, cost and gradient at B."""
        traj = self.forward(B)
        costate = self.costate(traj, B, cutoff)
        cost = self.cost(traj, B)
        gradient = assemble_gradient(traj, costate, B, self.run.lam)
        logger.info(
            f"J={cost.total:.6e} (tracking {cost.tracking:.6e}, "
            f"regularization {cost.regularization:.6e}), |grad J|={gradient.norm():.4e}"
        )
        return Evaluation(B, traj, costate, cost, gradient)

    def zero_control(self) -> ControlField:
        return ControlField.zeros(self.run.field_grid, self.run.T)
