import numpy as np
import pytest

from conftest import unit_bump
from src.core_model import BumpSum, CutoffSpec
from src.forward import ParticleEnsemble, TransportedTarget, run_forward
from src.sensitivity import (
    CostateStore,
    StoreAlignmentError,
    check_alignment,
    run_backward,
    run_backward_via_h,
    run_tangent,
    tangent_pairing,
    terminal_costate,
)


@pytest.fixture(scope="module")
def trajectory(ensemble, swirl_control, run_config):
    return run_forward(ensemble, swirl_control, run_config)


@pytest.fixture(scope="module")
def tracer_trajectory(ensemble, swirl_control, run_config):
    return run_forward(ensemble, swirl_control, run_config, self_field=False)


# Terminal data


def test_perfect_tracking_has_zero_costate(trajectory, swirl_control, datum):
    target = TransportedTarget(trajectory, datum)
    g, G = terminal_costate(trajectory, target)
    np.testing.assert_array_equal(g, 0)
    np.testing.assert_array_equal(G, 0)
    costate = run_backward(trajectory, swirl_control, target)
    np.testing.assert_array_equal(costate.values, 0)
    np.testing.assert_array_equal(costate.gradients, 0)


def test_zero_target_terminal_costate_is_the_datum(trajectory, ensemble):
    g, G = terminal_costate(trajectory, BumpSum())
    np.testing.assert_array_equal(g, ensemble.values)
    expected = np.einsum("ni,nij->nj", ensemble.gradients, trajectory.inverse_jacobians[-1])
    np.testing.assert_array_equal(G, expected)


def test_terminal_costate_needs_jacobians(ensemble, swirl_control, run_config, velocity_target):
    traj = run_forward(ensemble, swirl_control, run_config, with_jacobians=False)
    with pytest.raises(ValueError):
        terminal_costate(traj, velocity_target)


# Backward pass


def test_costate_store_layout(trajectory, swirl_control, velocity_target, ensemble):
    costate = run_backward(trajectory, swirl_control, velocity_target)
    assert costate.values.shape == (5, ensemble.count)
    assert costate.gradients.shape == (5, ensemble.count, 6)
    np.testing.assert_array_equal(costate.times, trajectory.times)
    g_T, G_T = terminal_costate(trajectory, velocity_target)
    np.testing.assert_array_equal(costate.values[-1], g_T)
    np.testing.assert_array_equal(costate.gradients[-1], G_T)
    assert np.all(np.isfinite(costate.gradients))
    check_alignment(trajectory, costate)


def test_single_particle_costate_is_constant(swirl_control, run_config, velocity_target):
    lone = ParticleEnsemble(
        points=np.array([[0.2, -0.1, 0.0, 0.5, 0.0, 0.1]]),
        cell_volume=0.05,
        values=np.array([0.7]),
        gradients=np.array([[0.1, 0.2, -0.3, 0.4, -0.5, 0.6]]),
        spacing=0.6,
    )
    traj = run_forward(lone, swirl_control, run_config)
    costate = run_backward(traj, swirl_control, velocity_target)
    np.testing.assert_array_equal(
        costate.values, np.broadcast_to(costate.values[-1], costate.values.shape)
    )
    assert not np.allclose(costate.gradients[0], costate.gradients[-1])


def test_costate_ignores_cutoff_beyond_support(trajectory, swirl_control, velocity_target):
    radius = 1.01 * float(np.max(trajectory.support_radii()))
    narrow = run_backward(
        trajectory, swirl_control, velocity_target, cutoff=CutoffSpec(radius, 2.0 * radius)
    )
    wide = run_backward(
        trajectory, swirl_control, velocity_target, cutoff=CutoffSpec(radius, 4.0 * radius)
    )
    np.testing.assert_array_equal(narrow.values, wide.values)
    np.testing.assert_array_equal(narrow.gradients, wide.gradients)


@pytest.mark.parametrize("factor", [1.5, 3.0])
def test_costate_on_support_ignores_outer_cutoff_radius(
    trajectory, swirl_control, velocity_target, factor
):
    reference = run_backward(trajectory, swirl_control, velocity_target)
    radius = reference.cutoff.inner_radius
    other = run_backward(
        trajectory,
        swirl_control,
        velocity_target,
        cutoff=CutoffSpec.from_support(radius, factor),
    )
    np.testing.assert_allclose(other.values, reference.values, rtol=0, atol=1e-8)


def test_default_cutoff_follows_support(trajectory, swirl_control, velocity_target):
    costate = run_backward(trajectory, swirl_control, velocity_target)
    radius = float(np.max(trajectory.support_radii()))
    assert costate.cutoff.inner_radius == pytest.approx(radius)
    assert costate.cutoff.outer_radius == pytest.approx(2.0 * radius)


def test_alignment_check_rejects_foreign_stores(trajectory, ensemble):
    short = CostateStore(
        trajectory.times[:-1],
        np.zeros((4, ensemble.count)),
        np.zeros((4, ensemble.count, 6)),
        CutoffSpec(1.0, 2.0),
    )
    with pytest.raises(StoreAlignmentError, match="time grids"):
        check_alignment(trajectory, short)
    narrow = CostateStore(
        trajectory.times, np.zeros((5, 3)), np.zeros((5, 3, 6)), CutoffSpec(1.0, 2.0)
    )
    with pytest.raises(StoreAlignmentError, match="particles"):
        check_alignment(trajectory, narrow)


# Decomposition g = f - h


def test_decomposition_with_zero_target_carries_the_datum(trajectory, swirl_control, ensemble):
    costate = run_backward_via_h(trajectory, swirl_control, BumpSum())
    np.testing.assert_array_equal(
        costate.values, np.broadcast_to(ensemble.values, costate.values.shape)
    )
    transported = np.einsum("ni,tnij->tnj", ensemble.gradients, trajectory.inverse_jacobians)
    np.testing.assert_array_equal(costate.gradients, transported)


def test_decomposition_is_affine_in_the_target(trajectory, swirl_control, ensemble):
    centre = (0.0, 0.0, 0.0, 0.3, 0.0, 0.0)
    once = run_backward_via_h(
        trajectory, swirl_control, BumpSum.of([unit_bump(center=centre)])
    )
    twice = run_backward_via_h(
        trajectory, swirl_control, BumpSum.of([unit_bump(center=centre, amplitude=2.0)])
    )
    f0 = ensemble.values[None, :]
    np.testing.assert_allclose(
        twice.values - f0, 2.0 * (once.values - f0), rtol=1e-12, atol=1e-14
    )


def test_decomposition_matches_direct_pass_for_tracers(
    tracer_trajectory, swirl_control, velocity_target
):
    direct = run_backward(tracer_trajectory, swirl_control, velocity_target)
    split = run_backward_via_h(tracer_trajectory, swirl_control, velocity_target)
    # without the self-field g is constant along characteristics in both forms
    np.testing.assert_allclose(split.values, direct.values, rtol=1e-13, atol=1e-15)
    np.testing.assert_allclose(split.gradients, direct.gradients, rtol=1e-9, atol=1e-11)


def test_costate_of_the_density_itself_stays_constant(trajectory, swirl_control, ensemble):
    # f_d = 0 gives g(T) = f(T); the self-field source of f against itself vanishes
    costate = run_backward(trajectory, swirl_control, BumpSum())
    np.testing.assert_allclose(
        costate.values, np.broadcast_to(ensemble.values, costate.values.shape), atol=1e-10
    )


def test_decomposition_matches_direct_pass_with_self_field(
    trajectory, swirl_control, velocity_target
):
    direct = run_backward(trajectory, swirl_control, velocity_target)
    split = run_backward_via_h(trajectory, swirl_control, velocity_target)
    assert np.max(np.abs(direct.values[0] - direct.values[-1])) > 1e-6
    np.testing.assert_allclose(split.values, direct.values, rtol=0, atol=1e-6)
    np.testing.assert_allclose(split.gradients, direct.gradients, rtol=1e-8, atol=1e-8)


# Tangent


def test_tangent_vanishes_in_zero_direction(trajectory, swirl_control, zero_control):
    tangent = run_tangent(trajectory, swirl_control, zero_control)
    np.testing.assert_array_equal(tangent.values, 0)


def test_tangent_is_linear_in_the_direction(trajectory, swirl_control):
    once = run_tangent(trajectory, swirl_control, swirl_control)
    twice = run_tangent(trajectory, swirl_control, 2.0 * swirl_control)
    assert np.max(np.abs(once.final_values)) > 0
    np.testing.assert_array_equal(once.values[0], 0)
    np.testing.assert_allclose(twice.values, 2.0 * once.values, rtol=1e-10, atol=1e-15)


def test_tangent_pairing_vanishes_at_perfect_tracking(trajectory, swirl_control, datum):
    tangent = run_tangent(trajectory, swirl_control, swirl_control)
    assert tangent_pairing(trajectory, tangent, TransportedTarget(trajectory, datum)) == 0.0


def test_tangent_needs_inverse_jacobians(ensemble, swirl_control, run_config):
    traj = run_forward(ensemble, swirl_control, run_config, with_jacobians=False)
    with pytest.raises(ValueError):
        run_tangent(traj, swirl_control, swirl_control)
