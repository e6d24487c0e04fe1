"""Subcommand orchestration: run the pipeline for a scenario and write artifacts."""

import json
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from src.charflow.characteristics import support_bound_zeta
from src.config import (
    EXIT_FIXED_POINT_DIVERGED,
    EXIT_GRADCHECK_FAILED,
    EXIT_LINE_SEARCH_FAILED,
    EXIT_OK,
    EXIT_PICARD_FAILED,
)
from src.cli.scenario import Scenario, ScenarioError
from src.forward.control_field import ControlField
from src.forward.diagnostics import flow_diagnostics_frame, reconstructed_l2_norm
from src.forward.ensemble import ParticleEnsemble, lp_norm, sample_ensemble
from src.forward.snapshot import write_control, write_costate, write_csv, write_trajectory
from src.forward.solver import PicardConvergenceError, run_forward, run_forward_picard
from src.logger import get_logger
from src.optimize.admissible import discrete_V_norm
from src.optimize.descent import run_projected_gd
from src.optimize.fixed_point import fixed_point_iterate
from src.optimize.gradient import gradient_check, random_direction, taylor_table
from src.optimize.problem import ControlProblem

logger = get_logger(__name__)

BYTES_PER_FLOAT = 8


def _metadata(out: Path, scenario: Scenario, threads: int, **fields) -> Path:
    """metadata.json with provenance and derived quantities."""
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "mode": scenario.mode,
        "scenario_sha256": scenario.sha256,
        "threads": threads,
        "holder_exponent": scenario.run.admissible.holder_exponent,
        **fields,
    }
    path = out / "metadata.json"
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=float)
    return path


def _ensemble(scenario: Scenario) -> ParticleEnsemble:
    return sample_ensemble(
        scenario.datum, scenario.run.sample_spacing, scenario.run.weight_floor
    )


def _problem(scenario: Scenario) -> Tuple[ControlProblem, ControlField]:
    """Problem and initial control; a transported target is carried by that control."""
    ensemble = _ensemble(scenario)
    control = scenario.build_control()
    if scenario.target is None:
        problem = ControlProblem.transported(
            ensemble, scenario.datum, control, scenario.run, scenario.self_field
        )
    else:
        problem = ControlProblem(ensemble, scenario.target, scenario.run, scenario.self_field)
    return problem, control


def dry_run(scenario: Scenario) -> int:
    """Validate the scenario and report derived sizes without running."""
    ensemble = _ensemble(scenario)
    run = scenario.run
    n = ensemble.count
    steps = run.n_steps
    trajectory_bytes = (steps + 1) * n * (6 + 2 * 36) * BYTES_PER_FLOAT
    costate_bytes = (steps + 1) * n * 7 * BYTES_PER_FLOAT
    grid = run.field_grid
    control_bytes = grid.n_time_knots * int(np.prod(grid.dims)) * 3 * BYTES_PER_FLOAT
    logger.info(f"Scenario {scenario.sha256[:12]} ({scenario.mode}) is valid")
    logger.info(f"Particles N_p = {n}, cell volume {ensemble.cell_volume:.4e}")
    logger.info(
        f"Time steps {steps} of {run.T / steps:g}, "
        f"control grid {grid.dims} x {grid.n_time_knots} knots"
    )
    logger.info(
        f"Memory estimate: trajectory {trajectory_bytes / 2**20:.1f} MiB, "
        f"costate {costate_bytes / 2**20:.1f} MiB, control {control_bytes / 2**20:.2f} MiB"
    )
    logger.info(f"Hoelder exponent of the admissible set {run.admissible.holder_exponent:.4f}")
    return EXIT_OK


def cmd_forward(scenario: Scenario, out: Path, threads: int) -> int:
    """Forward run: trajectory binary, diagnostics CSV and metadata."""
    ensemble = _ensemble(scenario)
    control = scenario.build_control()
    traj = run_forward(ensemble, control, scenario.run, self_field=scenario.self_field)
    write_trajectory(out / "trajectory.bin", traj, scenario.sha256, threads)
    write_csv(
        out / "forward_diagnostics.csv", flow_diagnostics_frame(traj), scenario.sha256, threads
    )
    initial_radius = float(traj.support_radii()[0])
    _metadata(
        out,
        scenario,
        threads,
        particles=ensemble.count,
        l2_norm=lp_norm(ensemble, 2),
        reconstructed_l2_norm=reconstructed_l2_norm(traj, scenario.datum),
        electric_norm=traj.electric_norm(),
        support_radius_final=float(traj.support_radii()[-1]),
        support_bound=support_bound_zeta(
            initial_radius, scenario.run.T, traj.electric_norm()
        ),
    )
    logger.info(f"Forward artifacts written to {out}")
    return EXIT_OK


def cmd_backward(scenario: Scenario, out: Path, threads: int) -> int:
    """Forward and costate runs: costate binary and per-step costate summary."""
    problem, control = _problem(scenario)
    traj = problem.forward(control)
    costate = problem.costate(traj, control)
    write_costate(out / "costate.bin", costate, scenario.sha256, threads)
    summary = pd.DataFrame(
        {
            "t": costate.times,
            "g_max": np.max(np.abs(costate.values), axis=1),
            "G_max": np.max(np.abs(costate.gradients), axis=(1, 2)),
        }
    )
    write_csv(out / "costate_summary.csv", summary, scenario.sha256, threads)
    cost = problem.cost(traj, control)
    _metadata(
        out,
        scenario,
        threads,
        particles=problem.ensemble.count,
        cutoff_inner_radius=costate.cutoff.inner_radius,
        cutoff_outer_radius=costate.cutoff.outer_radius,
        **cost.as_dict(),
    )
    logger.info(f"Costate artifacts written to {out}")
    return EXIT_OK


def _gradcheck_failures(frame: pd.DataFrame, scenario: Scenario) -> int:
    settings = scenario.gradcheck
    checks = [
        ("adjoint", "fd", settings.tolerance),
        ("adjoint", "tangent", settings.tangent_tolerance),
        ("tangent", "fd", settings.tangent_tolerance),
    ]
    failures = 0
    for _, row in frame.iterrows():
        for a, b, tol in checks:
            gap = abs(row[a] - row[b])
            if gap > tol * max(abs(row[a]), abs(row[b])) and gap > settings.abs_tolerance:
                logger.warning(
                    f"Direction {int(row['direction'])}: {a} vs {b} relative error "
                    f"{gap / max(abs(row[a]), abs(row[b])):.3e} exceeds {tol:g}"
                )
                failures += 1
    return failures


def cmd_gradcheck(scenario: Scenario, out: Path, threads: int, seed: int = 0) -> int:
    """Three-way gradient comparison over random directions plus the zero direction."""
    problem, control = _problem(scenario)
    evaluation = problem.evaluate(control)
    rng = np.random.default_rng(seed)
    grid, T = scenario.run.field_grid, scenario.run.T
    directions = [random_direction(grid, T, rng) for _ in range(scenario.gradcheck.directions)]
    directions.append(ControlField.zeros(grid, T))
    frame = gradient_check(
        problem, control, directions, scenario.gradcheck.delta, evaluation=evaluation
    )
    write_csv(out / "gradcheck.csv", frame, scenario.sha256, threads)
    if scenario.gradcheck.directions > 0:
        taylor = taylor_table(problem, control, directions[0], evaluation)
        write_csv(out / "taylor.csv", taylor, scenario.sha256, threads)
    logger.info("Gradient check\n" + frame.to_string(index=False))
    failures = _gradcheck_failures(frame, scenario)
    _metadata(out, scenario, threads, seed=seed, failures=failures, **evaluation.cost.as_dict())
    if failures:
        logger.error(f"Gradient check failed in {failures} comparisons")
        return EXIT_GRADCHECK_FAILED
    logger.info("Gradient check passed")
    return EXIT_OK


def cmd_optimize(scenario: Scenario, out: Path, threads: int) -> int:
    """Projected gradient descent: history, plot data and the final control."""
    problem, control = _problem(scenario)
    spec = scenario.run.admissible
    if discrete_V_norm(control, spec.beta) > spec.K * (1.0 + 1e-12):
        raise ScenarioError("initial_control", f"V-norm exceeds run.admissible.K={spec.K:g}")
    result = run_projected_gd(problem, control, scenario.optimize, spec)
    write_csv(out / "history.csv", result.history, scenario.sha256, threads)
    write_csv(out / "plot_J.csv", result.history[["iter", "J"]], scenario.sha256, threads)
    write_control(out / "control.bin", result.control, scenario.sha256, threads)
    _metadata(
        out,
        scenario,
        threads,
        status=result.status,
        iterations=len(result.history) - 1,
        variation_check=result.variation_check,
        final_V_norm=discrete_V_norm(result.control, spec.beta),
        **result.evaluation.cost.as_dict(),
    )
    if result.status == "line_search_failed":
        return EXIT_LINE_SEARCH_FAILED
    return EXIT_OK


def cmd_fixedpoint(scenario: Scenario, out: Path, threads: int) -> int:
    """Damped optimality-system iteration: residual history and the final control."""
    problem, control = _problem(scenario)
    settings = scenario.optimize
    result = fixed_point_iterate(
        problem,
        control,
        damping=settings.damping,
        max_iters=settings.max_iters,
        tol=settings.tol,
        formula=settings.formula,
    )
    write_csv(out / "history.csv", result.history, scenario.sha256, threads)
    write_csv(
        out / "plot_residual.csv", result.history[["iter", "residual"]], scenario.sha256, threads
    )
    write_control(out / "control.bin", result.control, scenario.sha256, threads)
    _metadata(
        out,
        scenario,
        threads,
        status=result.status,
        sweeps=len(result.history),
        first_order_residual=result.first_order_residual,
    )
    if result.status == "diverged":
        return EXIT_FIXED_POINT_DIVERGED
    return EXIT_OK


def cmd_picard_study(scenario: Scenario, out: Path, threads: int) -> int:
    """Picard recursion history and its distance to the direct solver."""
    ensemble = _ensemble(scenario)
    control = scenario.build_control()
    status: Optional[str] = None
    try:
        picard, history = run_forward_picard(
            ensemble, control, scenario.run, scenario.picard_max_iters, scenario.picard_tol
        )
        status = "converged"
    except PicardConvergenceError as e:
        logger.error(str(e))
        picard, history = None, e.history
        status = "not_converged"
    frame = pd.DataFrame({"iter": np.arange(1, len(history) + 1), "difference": history})
    frame["ratio"] = frame["difference"] / frame["difference"].shift(1)
    write_csv(out / "picard.csv", frame, scenario.sha256, threads)
    distance = None
    if picard is not None:
        direct = run_forward(ensemble, control, scenario.run, with_jacobians=False)
        distance = float(np.max(np.abs(picard.states - direct.states)))
        logger.info(f"Picard vs direct solver: sup distance {distance:.3e}")
    _metadata(
        out, scenario, threads, status=status, iterations=len(history), direct_distance=distance
    )
    return EXIT_OK if picard is not None else EXIT_PICARD_FAILED
