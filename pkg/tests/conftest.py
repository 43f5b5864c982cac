import numpy as np
import pytest

from trajtrack import (
    ConstraintSet,
    FfWeights,
    ModelParams,
    VehicleState,
    augment_reference,
    generate_piecewise_reference,
)

# Five piecewise-constant segments over 5 s; the speed jumps at segment
# boundaries need accelerations far outside the input bounds, so the
# optimized plan has active constraints.
FIVE_SEGMENTS = (
    (1.0, 15.0, 0.0),
    (1.0, 18.0, 0.03),
    (1.0, 20.0, 0.0),
    (1.0, 16.0, -0.04),
    (1.0, 15.0, 0.0),
)
Q_DIAG = (10.0, 10.0, 10.0, 0.0, 10.0, 0.0)
R_DIAGS = ((0.1, 0.1), (1.0, 1.0))
INPUT_BOUNDS = dict(u_min=np.array([-0.1, -4.0]), u_max=np.array([0.1, 2.5]))


@pytest.fixture
def params():
    return ModelParams()


@pytest.fixture
def five_segment_problem(params):
    """Reference, weights, bounds, and start state of the benchmark scenario."""
    ref = generate_piecewise_reference(FIVE_SEGMENTS, params)
    weights = FfWeights.from_diagonals(Q_DIAG, R_DIAGS, ref.horizon)
    bounds = ConstraintSet(**INPUT_BOUNDS)
    x0 = VehicleState.from_array(augment_reference(ref).tau_hat[0])
    return ref, weights, bounds, x0


def sinusoid_inputs(t):
    """Verification-scenario commands: slow cosine on acceleration, faster
    cosine on steering."""
    from trajtrack import ControlInput

    return ControlInput(0.2 * np.cos(2.0 * np.pi * t / 5.0), 2.0 * np.cos(2.0 * np.pi * t / 10.0))
