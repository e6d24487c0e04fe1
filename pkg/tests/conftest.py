import os

os.environ.setdefault("VPC_SHOW_PROGRESS", "0")

import numpy as np
import pytest

from src.core_model import AdmissibleSpec, BumpSum, CompactBump, FieldGrid, RunConfig
from src.forward import ControlField, sample_ensemble

SAMPLE_SPACING = 0.6
FINAL_TIME = 0.2
TIME_STEP = 0.05
SOFTENING = 0.12
LAMBDA = 1e-2

# JSON form of the small problem above, for scenario-level tests
SMALL_SCENARIO = {
    "initial_datum": [
        {"center": [0.0] * 6, "radius_x": 1.0, "radius_v": 1.0, "amplitude": 1.0}
    ],
    "target": [
        {"center": [0.0, 0.0, 0.0, 0.3, 0.0, 0.0], "radius_x": 1.0, "radius_v": 1.0}
    ],
    "run": {
        "T": FINAL_TIME,
        "dt": TIME_STEP,
        "softening": SOFTENING,
        "sample_spacing": SAMPLE_SPACING,
        "lambda": LAMBDA,
        "field_grid": {
            "origin": [-3.2, -3.2, -3.2],
            "spacing": [0.8, 0.8, 0.8],
            "dims": [9, 9, 9],
            "n_time_knots": 3,
        },
    },
    "optimize": {"max_iters": 2},
    "gradcheck": {"directions": 1},
    "picard": {"max_iters": 30, "tol": 1e-10},
}


def unit_bump(center=(0.0,) * 6, amplitude=1.0, exponent=3) -> CompactBump:
    return CompactBump(
        center=center, radius_x=1.0, radius_v=1.0, amplitude=amplitude, exponent=exponent
    )


@pytest.fixture(scope="session")
def datum() -> BumpSum:
    """Centered unit bump; sampled at spacing 0.6 it gives 361 particles."""
    return BumpSum.of([unit_bump()])


@pytest.fixture(scope="session")
def velocity_target() -> BumpSum:
    """The datum shifted by 0.3 in v_x."""
    return BumpSum.of([unit_bump(center=(0.0, 0.0, 0.0, 0.3, 0.0, 0.0))])


@pytest.fixture(scope="session")
def position_target() -> BumpSum:
    """The datum shifted by 0.3 in x."""
    return BumpSum.of([unit_bump(center=(0.3, 0.0, 0.0, 0.0, 0.0, 0.0))])


@pytest.fixture(scope="session")
def field_grid() -> FieldGrid:
    return FieldGrid(
        origin=(-3.2, -3.2, -3.2), spacing=(0.8, 0.8, 0.8), dims=(9, 9, 9), n_time_knots=3
    )


@pytest.fixture(scope="session")
def run_config(field_grid) -> RunConfig:
    return RunConfig(
        T=FINAL_TIME,
        dt=TIME_STEP,
        softening=SOFTENING,
        sample_spacing=SAMPLE_SPACING,
        field_grid=field_grid,
        lam=LAMBDA,
        admissible=AdmissibleSpec(K=50.0, beta=4.0),
    )


@pytest.fixture(scope="session")
def fine_run_config(run_config) -> RunConfig:
    """Same problem with dt = 0.02 for derivative comparisons."""
    return run_config.with_updates(dt=0.02)


@pytest.fixture(scope="session")
def ensemble(datum):
    return sample_ensemble(datum, SAMPLE_SPACING)


@pytest.fixture(scope="session")
def swirl_control(field_grid) -> ControlField:
    """Smooth, time-dependent field, mostly along z."""

    def field(t, X):
        envelope = np.exp(-np.sum(X**2, axis=1) / 4.0)
        return np.stack(
            [0.2 * X[:, 1] * envelope, -0.1 * envelope, (0.5 + t) * envelope], axis=1
        )

    return ControlField.from_function(field_grid, FINAL_TIME, field)


@pytest.fixture(scope="session")
def zero_control(field_grid) -> ControlField:
    return ControlField.zeros(field_grid, FINAL_TIME)
