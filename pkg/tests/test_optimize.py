import math

import numpy as np
import pytest

from src.core_model import AdmissibleSpec, BumpSum, CutoffSpec, FieldGrid
from src.forward import ControlField, run_forward
from src.optimize import (
    ControlProblem,
    OptimizeConfig,
    assemble_gradient,
    discrete_V_norm,
    eval_cost,
    fd_directional,
    first_order_residual,
    fixed_point_iterate,
    gradient_check,
    optimality_update,
    project_admissible,
    random_direction,
    relative_error,
    run_projected_gd,
    sine_mode,
    sine_symbol,
    taylor_table,
    variation_inequality_check,
)
from src.sensitivity import CostateStore

LAMBDA = 1e-2


@pytest.fixture(scope="module")
def trajectory(ensemble, swirl_control, run_config):
    return run_forward(ensemble, swirl_control, run_config)


@pytest.fixture(scope="module")
def tracking_problem(ensemble, velocity_target, run_config):
    return ControlProblem(ensemble, velocity_target, run_config)


@pytest.fixture(scope="module")
def matched_problem(ensemble, datum, swirl_control, run_config):
    """Target transported by the swirl control itself."""
    return ControlProblem.transported(ensemble, datum, swirl_control, run_config)


@pytest.fixture(scope="module")
def resting_problem(ensemble, datum, zero_control, run_config):
    """Target transported by the zero control."""
    return ControlProblem.transported(ensemble, datum, zero_control, run_config)


def zero_costate(traj) -> CostateStore:
    n = traj.ensemble.count
    return CostateStore(
        traj.times,
        np.zeros((traj.n_steps + 1, n)),
        np.zeros((traj.n_steps + 1, n, 6)),
        CutoffSpec(2.0, 4.0),
    )


# Admissible set


def impulse_control() -> ControlField:
    grid = FieldGrid(origin=(0, 0, 0), spacing=(1, 1, 1), dims=(5, 5, 5), n_time_knots=2)
    values = np.zeros((2, 5, 5, 5, 3))
    values[0, 2, 2, 2, 0] = 1.0
    return ControlField(grid, 1.0, values)


def test_v_norm_of_an_impulse_by_hand():
    # W part: 1 + 3 * 2 / 16 + 3 * 18 + 6 * 4 / 256; H part: 1 + 3 * 2
    expected = math.sqrt(0.5 * math.sqrt(55.46875)) + math.sqrt(0.5 * 7.0)
    assert discrete_V_norm(impulse_control(), 4.0) == pytest.approx(expected, rel=1e-12)


def test_v_norm_is_absolutely_homogeneous(swirl_control, zero_control):
    assert discrete_V_norm(zero_control, 4.0) == 0.0
    norm = discrete_V_norm(swirl_control, 4.0)
    assert norm > 0
    assert discrete_V_norm(-2.0 * swirl_control, 4.0) == pytest.approx(2.0 * norm, rel=1e-12)
    with pytest.raises(ValueError):
        discrete_V_norm(swirl_control, 3.0)


def test_projection_keeps_admissible_controls(swirl_control):
    norm = discrete_V_norm(swirl_control, 4.0)
    spec = AdmissibleSpec(K=2.0 * norm, beta=4.0)
    assert project_admissible(swirl_control, spec) is swirl_control


def test_projection_retracts_radially(swirl_control):
    norm = discrete_V_norm(swirl_control, 4.0)
    spec = AdmissibleSpec(K=0.5 * norm, beta=4.0)
    projected = project_admissible(swirl_control, spec)
    np.testing.assert_allclose(projected.values, 0.5 * swirl_control.values, rtol=1e-12)
    assert discrete_V_norm(projected, 4.0) == pytest.approx(spec.K, rel=1e-12)
    assert project_admissible(projected, spec) is projected


# Cost


def test_cost_against_zero_target_is_half_the_datum_norm(
    ensemble, zero_control, run_config
):
    traj = run_forward(ensemble, zero_control, run_config, with_jacobians=False)
    cost = eval_cost(traj, zero_control, BumpSum(), LAMBDA)
    assert cost.tracking == 0.5 * ensemble.l2_norm_squared()
    assert cost.regularization == 0.0
    assert cost.total == cost.tracking


def test_regularization_is_quadratic(trajectory, swirl_control, velocity_target):
    once = eval_cost(trajectory, swirl_control, velocity_target, LAMBDA)
    twice = eval_cost(trajectory, 2.0 * swirl_control, velocity_target, LAMBDA)
    assert once.regularization > 0
    assert twice.regularization == pytest.approx(4.0 * once.regularization, rel=1e-12)
    assert eval_cost(trajectory, swirl_control, velocity_target, 0.0).regularization == 0.0
    with pytest.raises(ValueError, match="lambda"):
        eval_cost(trajectory, swirl_control, velocity_target, -1.0)
    assert set(once.as_dict()) == {"J", "tracking", "reg"}


def test_perfect_tracking_costs_nothing(matched_problem, swirl_control):
    traj = matched_problem.forward(swirl_control, with_jacobians=False)
    cost = matched_problem.cost(traj, swirl_control)
    assert cost.tracking == 0.0
    assert cost.total == cost.regularization


def test_objective_matches_full_evaluation(tracking_problem, swirl_control):
    evaluation = tracking_problem.evaluate(swirl_control)
    assert tracking_problem.objective(swirl_control) == evaluation.cost.total
    assert evaluation.cost.tracking > 0


def test_problem_from_datum_samples_with_run_spacing(datum, velocity_target, run_config):
    problem = ControlProblem.from_datum(datum, velocity_target, run_config)
    assert problem.ensemble.count == 361
    assert problem.target_norm_sq == velocity_target.l2_norm_squared()


# Gradient


def test_regularization_gradient_of_a_sine_mode(trajectory, field_grid):
    mode = (1, 2, 1)
    B = sine_mode(field_grid, 0.2, mode, component=1)
    gradient = assemble_gradient(trajectory, zero_costate(trajectory), B, LAMBDA)
    np.testing.assert_array_equal(gradient.tracking.values, 0)
    expected = LAMBDA * sine_symbol(field_grid, mode) * B.values
    np.testing.assert_allclose(gradient.total.values, expected, atol=1e-12)


def test_gradient_rejects_negative_lambda(trajectory, swirl_control):
    with pytest.raises(ValueError):
        assemble_gradient(trajectory, zero_costate(trajectory), swirl_control, -1.0)


def test_central_difference_of_a_quadratic_is_exact(swirl_control, field_grid):
    H = random_direction(field_grid, 0.2, np.random.default_rng(3))

    def energy(B):
        return LAMBDA * B.gradient_energy()

    fd = fd_directional(swirl_control, H, 1e-2, energy)
    assert fd == pytest.approx(LAMBDA * swirl_control.gradient_pairing(H), rel=1e-8)


def test_central_difference_edge_cases(swirl_control, zero_control):
    def untouched(B):
        pytest.fail("evaluated in the zero direction")

    assert fd_directional(swirl_control, zero_control, 1e-3, untouched) == 0.0
    with pytest.raises(ValueError, match="delta"):
        fd_directional(swirl_control, swirl_control, 0.0, lambda B: 0.0)


def test_random_direction_is_normalized_and_seeded(field_grid):
    H = random_direction(field_grid, 0.2, np.random.default_rng(5))
    assert H.max_abs() == pytest.approx(1.0)
    again = random_direction(field_grid, 0.2, np.random.default_rng(5))
    np.testing.assert_array_equal(H.values, again.values)
    assert np.all(H.values[:, 0] == 0)


def test_relative_error():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1.0, 2.0) == 0.5
    assert relative_error(-1.0, 1.0) == 2.0


@pytest.mark.slow
def test_adjoint_tangent_and_differences_agree(
    ensemble, velocity_target, fine_run_config, swirl_control
):
    problem = ControlProblem(ensemble, velocity_target, fine_run_config)
    grid = fine_run_config.field_grid
    directions = [
        random_direction(grid, fine_run_config.T, np.random.default_rng(0)),
        ControlField.zeros(grid, fine_run_config.T),
    ]
    frame = gradient_check(problem, swirl_control, directions, 1e-4)
    assert len(frame) == 2
    first = frame.iloc[0]
    assert abs(first["adjoint"]) > 0
    assert first["rel_adjoint_fd"] < 5e-2
    assert first["rel_adjoint_tangent"] < 5e-2
    assert first["rel_tangent_fd"] < 5e-2
    zero = frame.iloc[1]
    for column in ("adjoint", "tangent", "fd", "adjoint_tracking", "tangent_tracking"):
        assert zero[column] == 0.0


def test_gradient_tracking_part_vanishes_at_perfect_tracking(
    matched_problem, swirl_control, field_grid
):
    H = random_direction(field_grid, 0.2, np.random.default_rng(1))
    frame = gradient_check(matched_problem, swirl_control, [H], 1e-4)
    assert frame.loc[0, "adjoint_tracking"] == 0.0
    assert frame.loc[0, "tangent_tracking"] == 0.0
    assert frame.loc[0, "adjoint"] == pytest.approx(
        LAMBDA * swirl_control.gradient_pairing(H), rel=1e-12
    )


def test_taylor_remainder_drops_an_order(tracking_problem, swirl_control, field_grid):
    H = random_direction(field_grid, 0.2, np.random.default_rng(2))
    evaluation = tracking_problem.evaluate(swirl_control)
    frame = taylor_table(tracking_problem, swirl_control, H, evaluation)
    assert list(frame.columns) == ["delta", "remainder_zero", "remainder_first"]
    assert len(frame) == 4
    last = frame.iloc[-1]
    assert last["remainder_first"] < last["remainder_zero"]


# Projected gradient descent


def test_descent_stops_at_a_stationary_point(resting_problem, zero_control):
    result = run_projected_gd(resting_problem, zero_control, OptimizeConfig(max_iters=3))
    assert result.status == "stationary"
    assert len(result.history) == 1
    assert result.history.loc[0, "J"] == 0.0
    assert result.variation_check is None
    assert result.control is zero_control


def test_descent_rejects_inadmissible_start(tracking_problem, swirl_control):
    spec = AdmissibleSpec(K=1e-6, beta=4.0)
    with pytest.raises(ValueError, match="admissible"):
        run_projected_gd(tracking_problem, swirl_control, OptimizeConfig(), spec)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"step_size": 0.0},
        {"armijo": 1.0},
        {"backtrack": 0.0},
        {"max_iters": 0},
        {"damping": 0.0},
        {"max_field_step": -1.0},
        {"formula": "spectral"},
    ],
)
def test_optimize_config_validation(kwargs):
    with pytest.raises(ValueError, match="optimize"):
        OptimizeConfig(**kwargs)


@pytest.mark.slow
def test_descent_decreases_the_cost(tracking_problem, zero_control):
    result = run_projected_gd(tracking_problem, zero_control, OptimizeConfig(max_iters=3))
    J = result.history["J"].to_numpy()
    assert len(J) >= 2
    assert np.all(np.diff(J) <= 0)
    assert J[-1] < J[0]
    assert discrete_V_norm(result.control, 4.0) <= tracking_problem.run.admissible.K * (1 + 1e-9)


def test_variation_check_at_a_stationary_point(resting_problem, zero_control):
    evaluation = resting_problem.evaluate(zero_control)
    assert variation_inequality_check(evaluation, AdmissibleSpec(K=1.0, beta=4.0)) == 0.0


# Fixed point


def test_fixed_point_at_perfect_tracking_converges_immediately(resting_problem, zero_control):
    result = fixed_point_iterate(resting_problem, zero_control, 1.0, 5, 1e-9)
    assert result.status == "converged"
    assert len(result.history) == 1
    assert result.control.max_abs() == 0.0
    assert result.first_order_residual == 0.0


def test_fixed_point_needs_positive_lambda(ensemble, velocity_target, run_config, zero_control):
    problem = ControlProblem(ensemble, velocity_target, run_config.with_updates(lam=0.0))
    with pytest.raises(ValueError, match="lambda"):
        fixed_point_iterate(problem, zero_control, 0.5, 5, 1e-9)


def test_fixed_point_validates_settings(tracking_problem, zero_control):
    with pytest.raises(ValueError, match="damping"):
        fixed_point_iterate(tracking_problem, zero_control, 0.0, 5, 1e-9)
    with pytest.raises(ValueError, match="max_iters"):
        fixed_point_iterate(tracking_problem, zero_control, 0.5, 0, 1e-9)


def test_optimality_update_rejects_unknown_formula(trajectory, swirl_control):
    with pytest.raises(ValueError, match="formula"):
        optimality_update(trajectory, zero_costate(trajectory), swirl_control, 1.0, "spectral")
    with pytest.raises(ValueError, match="lambda"):
        optimality_update(trajectory, zero_costate(trajectory), swirl_control, 0.0)


def test_discrete_update_inverts_the_grid_laplacian(
    tracking_problem, swirl_control
):
    evaluation = tracking_problem.evaluate(swirl_control)
    lam = 0.5
    update = optimality_update(
        evaluation.trajectory, evaluation.costate, swirl_control, lam, "discrete"
    )
    # -lambda Delta_h U + R = 0 on the interior nodes
    gradient = assemble_gradient(evaluation.trajectory, evaluation.costate, update, lam)
    scale = gradient.tracking.max_abs()
    assert scale > 0
    assert gradient.max_abs() <= 1e-8 * scale


@pytest.mark.slow
def test_discrete_fixed_point_contracts(ensemble, velocity_target, run_config, zero_control):
    problem = ControlProblem(ensemble, velocity_target, run_config.with_updates(lam=1.0))
    result = fixed_point_iterate(problem, zero_control, 1.0, 30, 1e-9, formula="discrete")
    assert result.status == "converged"
    ratios = result.history["ratio"].dropna()
    assert len(ratios) > 0
    assert np.all(ratios < 1.0)
    assert result.first_order_residual <= 1e-3


def test_newton_fixed_point_contracts(ensemble, velocity_target, run_config, zero_control):
    problem = ControlProblem(ensemble, velocity_target, run_config.with_updates(lam=1.0))
    result = fixed_point_iterate(problem, zero_control, 1.0, 40, 1e-9, formula="newton")
    assert result.status == "converged"
    ratios = result.history["ratio"].dropna()
    assert len(ratios) > 0
    assert np.all(ratios < 1.0)
    assert result.first_order_residual <= 1e-3
    evaluation = problem.evaluate(result.control)
    residual = first_order_residual(
        evaluation.trajectory, evaluation.costate, result.control, 1.0, "newton"
    )
    assert residual == pytest.approx(result.first_order_residual)


def test_first_order_residual_rejects_unknown_formula(trajectory, swirl_control):
    with pytest.raises(ValueError, match="formula"):
        first_order_residual(trajectory, zero_costate(trajectory), swirl_control, 1.0, "spectral")
