import numpy as np
import pytest

from trajtrack import (
    ModelParams,
    ReferenceTrajectory,
    augment_reference,
    generate_piecewise_reference,
    load_reference_csv,
    reference_derived_inputs,
    save_reference_csv,
)


def test_augment_constant_reference():
    ref = ReferenceTrajectory(np.tile([0.0, 0.0, 0.0, 10.0], (4, 1)), dt=0.1)
    aug = augment_reference(ref)
    assert np.array_equal(aug.tau_hat, np.tile([0, 0, 0, 0, 10, 0.0], (4, 1)))


def test_augment_zero_reference_is_zero():
    ref = ReferenceTrajectory(np.zeros((5, 4)), dt=0.1)
    assert np.array_equal(augment_reference(ref).tau_hat, np.zeros((5, 6)))


def test_augment_project_round_trip():
    rng = np.random.default_rng(1)
    states = rng.normal(size=(12, 4))
    ref = ReferenceTrajectory(states, dt=0.05)
    aug = augment_reference(ref)
    assert np.array_equal(aug.project(), states)
    assert np.array_equal(aug.tau_hat[:, 3], np.zeros(12))  # delta at equilibrium
    assert np.array_equal(aug.tau_hat[:, 5], np.zeros(12))  # alpha at equilibrium


def test_reference_rejects_malformed_states():
    with pytest.raises(ValueError):
        ReferenceTrajectory(np.zeros((4, 3)), dt=0.1)
    with pytest.raises(ValueError):
        ReferenceTrajectory(np.zeros((1, 4)), dt=0.1)
    with pytest.raises(ValueError):
        ReferenceTrajectory(np.full((4, 4), np.nan), dt=0.1)


def test_generator_straight_line(params):
    ref = generate_piecewise_reference([(5.0, 20.0, 0.0)], params)
    k = np.arange(51)
    assert ref.states.shape == (51, 4)
    assert np.allclose(ref.states[:, 0], 20.0 * k * 0.1, atol=1e-12)
    assert np.array_equal(ref.states[:, 1], np.zeros(51))
    assert np.array_equal(ref.states[:, 2], np.zeros(51))
    assert np.array_equal(ref.states[:, 3], np.full(51, 20.0))


def test_generator_constant_steering_arc(params):
    duration, speed, steer = 3.0, 12.0, 0.05
    ref = generate_piecewise_reference([(duration, speed, steer)], params)
    omega = speed * np.tan(steer) / params.wheelbase_L
    assert ref.states[-1, 2] == pytest.approx(omega * duration, abs=1e-12)

    # positions against the closed-form sums of the discrete arc
    phi = omega * params.dt
    n = ref.horizon
    for K in (1, n // 2, n):
        half = 0.5 * K * phi
        kernel = np.sin(half) / np.sin(0.5 * phi)
        s_expected = params.dt * speed * kernel * np.cos((K - 1) * 0.5 * phi)
        y_expected = params.dt * speed * kernel * np.sin((K - 1) * 0.5 * phi)
        assert ref.states[K, 0] == pytest.approx(s_expected, abs=1e-9)
        assert ref.states[K, 1] == pytest.approx(y_expected, abs=1e-9)


def test_generator_five_segments_sample_count(params, five_segment_problem):
    ref = five_segment_problem[0]
    assert ref.states.shape[0] == 51
    assert ref.horizon == 50


def test_generator_continuous_pose_across_boundaries(params):
    ref = generate_piecewise_reference(
        [(1.0, 10.0, 0.0), (1.0, 25.0, 0.08), (1.0, 5.0, -0.08)], params
    )
    pose_steps = np.linalg.norm(np.diff(ref.states[:, :2], axis=0), axis=1)
    assert pose_steps.max() <= 25.0 * params.dt + 1e-12
    heading_steps = np.abs(np.diff(ref.states[:, 2]))
    assert heading_steps.max() <= 25.0 * np.tan(0.08) / params.wheelbase_L * params.dt + 1e-12
    # speed jumps exactly at the two boundaries
    assert np.flatnonzero(np.diff(ref.states[:, 3])).tolist() == [9, 19]


def test_generator_rejects_offgrid_durations(params):
    with pytest.raises(ValueError, match="multiple of dt"):
        generate_piecewise_reference([(0.55, 10.0, 0.0)], params)


def test_reference_derived_inputs_recover_segment_commands(params, five_segment_problem):
    ref = five_segment_problem[0]
    raw = reference_derived_inputs(ref, params)
    # interior of segment 2 (samples 10..18): constant speed 18, steering 0.03
    assert np.allclose(raw[11:19, 0], np.tan(0.03), atol=1e-12)
    assert np.allclose(raw[11:19, 1], 0.0, atol=1e-12)
    # speed step 15 -> 18 at the boundary appears as a dv/dt spike
    assert raw[9, 1] == pytest.approx(3.0 / params.dt, abs=1e-9)


def test_reference_csv_round_trip(tmp_path, params, five_segment_problem):
    ref = five_segment_problem[0]
    path = tmp_path / "ref.csv"
    save_reference_csv(ref, path)
    loaded = load_reference_csv(path)
    assert loaded.dt == pytest.approx(ref.dt, abs=1e-12)
    assert loaded.start_index == ref.start_index
    assert np.allclose(loaded.states, ref.states, atol=1e-9)


def test_reference_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,s,y,theta,v\n0,0,0,0,1\n0.1,1,0,0,1\n")
    with pytest.raises(ValueError, match="header"):
        load_reference_csv(path)


def test_reference_csv_rejects_nonuniform_spacing(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,s,y,theta,v\n0,0,0,0,1\n0.1,1,0,0,1\n0.3,2,0,0,1\n")
    with pytest.raises(ValueError, match="uniform"):
        load_reference_csv(path)


def test_reference_window(five_segment_problem):
    ref = five_segment_problem[0]
    win = ref.window(10, 20)
    assert win.horizon == 20
    assert win.start_index == 10
    assert np.array_equal(win.states, ref.states[10:31])
    with pytest.raises(ValueError):
        ref.window(40, 20)
