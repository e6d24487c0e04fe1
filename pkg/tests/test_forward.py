import math

import numpy as np
import pandas as pd
import pytest

from conftest import FINAL_TIME, SAMPLE_SPACING, TIME_STEP, unit_bump
from src.charflow import FieldProviders, integrate_flow, support_bound_zeta
from src.core_model import BumpSum
from src.forward import (
    ControlField,
    EmptyEnsembleError,
    PicardConvergenceError,
    TransportedTarget,
    flow_diagnostics_frame,
    lipschitz_study,
    lp_norm,
    run_forward,
    run_forward_picard,
    sample_ensemble,
    self_consistent_field,
    support_radius,
)
from src.forward.snapshot import (
    HEADER,
    read_control,
    read_csv,
    read_header,
    write_control,
    write_csv,
    write_trajectory,
)
from src.kernels import get_worker_count, set_worker_count

SCENARIO_HASH = "ab" * 32


@pytest.fixture(scope="module")
def drifting_ensemble(velocity_target):
    """Particles of the datum centered at v_x = 0.3, with net momentum."""
    return sample_ensemble(velocity_target, SAMPLE_SPACING)


@pytest.fixture(scope="module")
def swirl_trajectory(ensemble, swirl_control, run_config):
    return run_forward(ensemble, swirl_control, run_config)


def momentum(states, weights):
    return np.einsum("p,pd->d", weights, states[:, 3:])


# Sampling


def test_empty_datum_has_no_ensemble():
    with pytest.raises(EmptyEnsembleError):
        sample_ensemble(BumpSum(), SAMPLE_SPACING)
    with pytest.raises(EmptyEnsembleError):
        sample_ensemble(BumpSum.of([unit_bump(amplitude=0.0)]), SAMPLE_SPACING)


def test_weight_floor_above_every_weight_empties_ensemble(datum):
    with pytest.raises(EmptyEnsembleError, match="weight_floor"):
        sample_ensemble(datum, SAMPLE_SPACING, weight_floor=1.0)


def test_sampling_rejects_invalid_spacing(datum):
    with pytest.raises(ValueError):
        sample_ensemble(datum, 0.0)


def test_ensemble_on_unit_bump(ensemble, datum):
    # 19 lattice points in each unit 3-ball at spacing 0.6
    assert ensemble.count == 361
    assert ensemble.cell_volume == pytest.approx(SAMPLE_SPACING**6)
    np.testing.assert_allclose(ensemble.weights, ensemble.values * SAMPLE_SPACING**6)
    assert np.all(ensemble.values > 0)
    np.testing.assert_allclose(ensemble.values, datum.value(ensemble.points))


def test_weight_floor_drops_light_particles(datum, ensemble):
    floor = float(np.median(ensemble.weights))
    light = sample_ensemble(datum, SAMPLE_SPACING, weight_floor=floor)
    assert 0 < light.count < ensemble.count
    assert np.all(light.weights > floor)


def test_fine_sampling_reproduces_mass_and_l2_norm(datum):
    fine = sample_ensemble(datum, 0.25)
    assert float(np.sum(fine.weights)) == pytest.approx(datum.integral(), rel=1e-2)
    assert lp_norm(fine, 2) ** 2 == pytest.approx(datum.l2_norm_squared(), rel=1e-2)


def test_lp_norms(ensemble):
    assert lp_norm(ensemble, 1) == pytest.approx(float(np.sum(ensemble.weights)), rel=1e-12)
    assert lp_norm(ensemble, 2) ** 2 == pytest.approx(ensemble.l2_norm_squared(), rel=1e-12)
    assert lp_norm(ensemble, math.inf) == 1.0
    with pytest.raises(ValueError):
        lp_norm(ensemble, 0.5)


# Self-consistent field


def test_single_charge_field():
    field = self_consistent_field(np.zeros((1, 3)), np.ones(1), 0.0, exclude_self=False)
    np.testing.assert_allclose(field(0.0, [[2.0, 0, 0]]), [[0.25, 0, 0]])
    own = self_consistent_field(np.zeros((1, 3)), np.ones(1), 0.0)
    np.testing.assert_array_equal(own(0.0, [[2.0, 0, 0]]), 0)


def test_symmetric_pair_field_cancels_at_midpoint():
    positions = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
    field = self_consistent_field(positions, np.ones(2), 0.1)
    np.testing.assert_allclose(field(0.0, np.zeros((1, 3))), 0, atol=1e-15)


def test_snapshot_must_be_finite():
    with pytest.raises(ValueError):
        self_consistent_field(np.array([[np.nan, 0, 0]]), np.ones(1), 0.1)


# Forward solver


def test_self_field_conserves_momentum(drifting_ensemble, zero_control, run_config):
    traj = run_forward(drifting_ensemble, zero_control, run_config, with_jacobians=False)
    weights = drifting_ensemble.weights
    p0 = momentum(traj.states[0], weights)
    assert p0[0] > 0
    for states in traj.states[1:]:
        np.testing.assert_allclose(momentum(states, weights), p0, rtol=1e-8, atol=1e-12)


def test_center_of_mass_moves_with_total_momentum(drifting_ensemble, zero_control, run_config):
    traj = run_forward(drifting_ensemble, zero_control, run_config, with_jacobians=False)
    weights = drifting_ensemble.weights
    mass = float(np.sum(weights))
    for t, states in zip(traj.times, traj.states):
        centre = np.einsum("p,pd->d", weights, states[:, :3]) / mass
        np.testing.assert_allclose(centre, [0.3 * t, 0, 0], atol=1e-10)


def test_tracers_in_uniform_field_follow_larmor_orbits(ensemble, field_grid, run_config):
    b = (0.0, 0.4, 1.2)
    control = ControlField.uniform(field_grid, FINAL_TIME, b)
    traj = run_forward(ensemble, control, run_config, self_field=False)
    path = integrate_flow(
        ensemble.points, 0.0, FINAL_TIME, run_config.dt, FieldProviders.uniform_magnetic(b),
        with_jacobians=False,
    )
    for n, state in enumerate(path):
        np.testing.assert_allclose(traj.states[n], state.z, atol=1e-10)
    assert np.all(traj.electric_sup == 0.0)


def test_forward_rejects_control_on_other_horizon(ensemble, field_grid, run_config):
    with pytest.raises(ValueError, match="final time"):
        run_forward(ensemble, ControlField.zeros(field_grid, 1.0), run_config)


def test_rk4_converges_at_fourth_order(ensemble, field_grid, run_config):
    control = ControlField.uniform(field_grid, FINAL_TIME, (0.0, 0.0, 1.5))

    def final_states(dt):
        cfg = run_config.with_updates(dt=dt)
        return run_forward(ensemble, control, cfg, with_jacobians=False).final_states

    reference = final_states(0.0125)
    coarse = np.max(np.abs(final_states(0.05) - reference))
    medium = np.max(np.abs(final_states(0.025) - reference))
    assert 8.0 < coarse / medium < 32.0


def test_picard_recursion_matches_direct_solve(ensemble, swirl_control, run_config):
    picard, history = run_forward_picard(ensemble, swirl_control, run_config, 30, 1e-10)
    assert history[-1] < 1e-10
    ratios = np.array(history[1:]) / np.array(history[:-1])
    assert len(ratios) >= 1
    assert np.all(ratios < 0.8)
    # stage-wise frozen charges make the converged recursion the direct scheme
    direct = run_forward(ensemble, swirl_control, run_config, with_jacobians=False)
    assert np.max(np.abs(picard.states - direct.states)) < 1e-8
    assert picard.stage_positions.shape == (run_config.n_steps, 4, ensemble.count, 3)
    np.testing.assert_array_equal(picard.stage_positions[:, 0], picard.states[:-1, :, :3])


def test_picard_reports_history_when_not_converged(ensemble, swirl_control, run_config):
    with pytest.raises(PicardConvergenceError) as info:
        run_forward_picard(ensemble, swirl_control, run_config, 1, 1e-300)
    assert len(info.value.history) == 1
    with pytest.raises(ValueError):
        run_forward_picard(ensemble, swirl_control, run_config, 0, 1e-10)


def test_support_stays_within_zeta_bound(swirl_trajectory, run_config):
    r0 = support_radius(swirl_trajectory, 0)
    assert r0 <= math.sqrt(2.0)
    bound = support_bound_zeta(r0, run_config.T, swirl_trajectory.electric_norm())
    for n in range(swirl_trajectory.n_steps + 1):
        assert support_radius(swirl_trajectory, n) <= bound
    np.testing.assert_allclose(swirl_trajectory.support_radii()[0], r0)
    with pytest.raises(ValueError):
        support_radius(swirl_trajectory, swirl_trajectory.n_steps + 1)


def test_stored_state_interpolation(swirl_trajectory):
    np.testing.assert_array_equal(swirl_trajectory.state_at(0.1), swirl_trajectory.states[2])
    between = swirl_trajectory.state_at(0.075)
    lo, hi = swirl_trajectory.states[1], swirl_trajectory.states[2]
    assert np.all(between >= np.minimum(lo, hi) - 1e-3)
    assert np.all(between <= np.maximum(lo, hi) + 1e-3)


def test_forward_is_independent_of_worker_count(ensemble, swirl_control, run_config):
    original = get_worker_count()
    try:
        set_worker_count(1)
        serial = run_forward(ensemble, swirl_control, run_config, with_jacobians=False)
        set_worker_count(2)
        parallel = run_forward(ensemble, swirl_control, run_config, with_jacobians=False)
    finally:
        set_worker_count(original)
    np.testing.assert_array_equal(serial.states, parallel.states)


# Diagnostics


def test_flow_diagnostics_frame(swirl_trajectory):
    frame = flow_diagnostics_frame(swirl_trajectory)
    assert len(frame) == 5
    assert list(frame.columns) == [
        "t",
        "support_radius",
        "l1_norm",
        "l2_norm",
        "linf_norm",
        "electric_sup",
        "det_dev_mean",
        "det_dev_max",
        "mn_identity_dev",
    ]
    # RK4 is not volume preserving; the drift is a fourth-order truncation error
    assert frame["det_dev_max"].max() <= 100.0 * TIME_STEP**4
    assert frame["mn_identity_dev"].max() <= 1e-6
    assert frame["electric_sup"].min() > 0
    np.testing.assert_allclose(frame["t"], [0.0, 0.05, 0.1, 0.15, 0.2])


def test_determinant_drift_shrinks_with_the_step(ensemble, field_grid, run_config):
    control = ControlField.uniform(field_grid, FINAL_TIME, (0.0, 0.0, 1.5))

    def drift(dt):
        traj = run_forward(ensemble, control, run_config.with_updates(dt=dt))
        return flow_diagnostics_frame(traj)["det_dev_max"].max()

    coarse, fine = drift(0.05), drift(0.025)
    assert fine < coarse / 8.0


def test_transported_target_is_exact_at_particles(swirl_trajectory, ensemble, datum):
    target = TransportedTarget(swirl_trajectory, datum)
    np.testing.assert_allclose(
        target.value(swirl_trajectory.final_states), ensemble.values, rtol=1e-14
    )
    assert target.l2_norm_squared() == ensemble.l2_norm_squared()
    assert target.gradient(swirl_trajectory.final_states).shape == (ensemble.count, 6)


def test_transported_target_needs_jacobians(ensemble, swirl_control, run_config, datum):
    traj = run_forward(ensemble, swirl_control, run_config, with_jacobians=False)
    with pytest.raises(ValueError):
        TransportedTarget(traj, datum)


def test_displacement_is_lipschitz_in_the_control(ensemble, swirl_control, run_config):
    frame, slope = lipschitz_study(ensemble, swirl_control, swirl_control, run_config)
    assert len(frame) == 3
    assert 0.9 < slope < 1.1


# Control field


def test_uniform_control_interpolation(field_grid):
    b = np.array([0.1, -0.2, 0.3])
    control = ControlField.uniform(field_grid, FINAL_TIME, b)
    X = np.random.default_rng(0).uniform(-2.4, 2.4, (20, 3))
    np.testing.assert_allclose(control(0.13, X), np.tile(b, (20, 1)), rtol=1e-12)
    np.testing.assert_allclose(control.jacobian(0.13, X), 0, atol=1e-12)
    outside = np.array([[4.0, 0, 0], [3.2, 0, 0], [0, 0, -3.5]])
    np.testing.assert_array_equal(control(0.0, outside), 0)
    # the outermost node layer is held at zero
    assert np.linalg.norm(control(0.0, [[2.8, 0, 0]])) < np.linalg.norm(b)
    assert np.all(control.values[:, 0] == 0) and np.all(control.values[:, :, -1] == 0)


def test_control_is_linear_in_time_between_knots(field_grid):
    control = ControlField.from_function(
        field_grid, FINAL_TIME, lambda t, X: np.tile([0.0, 0.0, 1.0 + 10.0 * t], (len(X), 1))
    )
    np.testing.assert_allclose(control(0.05, [[0.0, 0, 0]]), [[0, 0, 1.5]])


def test_deposition_is_transpose_of_interpolation(field_grid):
    rng = np.random.default_rng(1)
    control = ControlField(
        field_grid, FINAL_TIME, rng.normal(size=(field_grid.n_time_knots, *field_grid.dims, 3))
    )
    X = rng.uniform(-3.0, 3.0, (50, 3))
    W = rng.normal(size=(50, 3))
    lhs = float(np.sum(W * control(0.0, X)))
    rhs = float(np.sum(control.deposit(X, W) * control.values[0]))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_gradient_pairing_is_minus_laplacian_pairing(swirl_control):
    minus_laplacian = swirl_control.with_values(-swirl_control.laplacian())
    pairing = swirl_control.gradient_pairing(swirl_control)
    assert pairing == pytest.approx(minus_laplacian.inner(swirl_control), rel=1e-10)
    assert swirl_control.gradient_energy() == pytest.approx(0.5 * pairing, rel=1e-12)


def test_control_arithmetic(swirl_control, zero_control):
    doubled = swirl_control + swirl_control
    np.testing.assert_allclose(doubled.values, (2.0 * swirl_control).values)
    np.testing.assert_array_equal((swirl_control - swirl_control).values, zero_control.values)
    assert swirl_control.axpy(-1.0, swirl_control).norm() == 0.0
    assert (3.0 * swirl_control).norm() == pytest.approx(3.0 * swirl_control.norm())


def test_control_rejects_wrong_shape(field_grid):
    with pytest.raises(ValueError, match="shape"):
        ControlField(field_grid, FINAL_TIME, np.zeros((2, 3)))


# Artifacts


def test_control_file_round_trip(swirl_control, tmp_path):
    path = write_control(tmp_path / "control.bin", swirl_control, SCENARIO_HASH, 3)
    header = read_header(path)
    assert header["tag"] == "CTRL"
    assert header["count"] == 729
    assert header["n_steps"] == 2
    assert header["threads"] == 3
    assert header["scenario_hash"] == SCENARIO_HASH
    loaded = read_control(path)
    assert loaded.grid == swirl_control.grid
    assert loaded.final_time == swirl_control.final_time
    np.testing.assert_array_equal(loaded.values, swirl_control.values)


def test_trajectory_file_layout(swirl_trajectory, tmp_path):
    path = write_trajectory(tmp_path / "trajectory.bin", swirl_trajectory, SCENARIO_HASH, 1)
    header = read_header(path)
    assert header["tag"] == "TRAJ"
    assert header["count"] == 361
    assert header["n_steps"] == 4
    assert header["flags"] == 3
    assert header["dt"] == pytest.approx(0.05)
    payload = 5 * 361 * (6 + 36 + 36) * 8
    assert path.stat().st_size == HEADER.size + payload


def test_read_header_rejects_foreign_files(tmp_path):
    path = tmp_path / "notes.bin"
    path.write_bytes(b"x" * 100)
    with pytest.raises(ValueError, match="snapshot"):
        read_header(path)


def test_csv_carries_provenance(tmp_path):
    frame = pd.DataFrame({"iter": [0, 1], "J": [0.5, 0.25]})
    path = write_csv(tmp_path / "history.csv", frame, SCENARIO_HASH, 2)
    assert path.read_text().splitlines()[0] == f"# scenario_sha256={SCENARIO_HASH} threads=2"
    pd.testing.assert_frame_equal(read_csv(path), frame)
