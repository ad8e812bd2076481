import numpy as np
import pytest

from minenav.estimation import OrientationState, complementary_update
from minenav.estimation.orientation import tilt_error
from minenav.geometry import quat_from_rotvec, quat_to_matrix
from minenav.sensors import ImuSample

G = np.array([0.0, 0.0, 9.81])


def _sample(gyro, accel, t=0.0):
    return ImuSample(stamp=t, angular_velocity=np.asarray(gyro, dtype=float),
                     linear_acceleration=np.asarray(accel, dtype=float),
                     fog_yaw_rate=None)


def test_stationary_tilt_converges_like_scalar_filter():
    # stationary: correction shrinks tilt by exactly (1 - gain) per update,
    # so after n updates error = (1 - gain)^n * initial (scalar oracle)
    gain = 0.02
    initial_tilt = 0.3
    state = OrientationState(
        attitude=quat_from_rotvec(np.array([initial_tilt, 0.0, 0.0])),
        gyro_bias=np.zeros(3), filter_gain=gain)
    dt = 1.0 / 200.0
    n = 1000  # 5 s at 200 Hz
    for i in range(n):
        # true attitude is level; measured gravity is world-up in body frame
        state = complementary_update(state, _sample([0, 0, 0], G), dt)
        expected = initial_tilt * (1.0 - gain) ** (i + 1)
        assert tilt_error(state) == pytest.approx(expected, rel=1e-4, abs=1e-12)
    assert tilt_error(state) < 1e-6


def test_pure_yaw_unaffected_by_correction():
    state = OrientationState.level(gain=0.02)
    dt = 1.0 / 200.0
    for _ in range(2000):  # 10 s at 0.1 rad/s
        state = complementary_update(state, _sample([0, 0, 0.1], G), dt)
    R = quat_to_matrix(state.attitude)
    yaw = np.arctan2(R[1, 0], R[0, 0])
    assert yaw == pytest.approx(1.0, abs=1e-6)
    assert tilt_error(state) < 1e-9


def test_quaternion_norm_contract():
    rng = np.random.default_rng(8)
    state = OrientationState.level(gain=0.1)
    for i in range(500):
        s = _sample(rng.normal(0, 2.0, 3), rng.normal(0, 3.0, 3) + G, i * 0.005)
        state = complementary_update(state, s, 0.005)
        assert np.linalg.norm(state.attitude) == pytest.approx(1.0, abs=1e-9)


def test_free_fall_skips_correction():
    tilt = 0.2
    state = OrientationState(
        attitude=quat_from_rotvec(np.array([tilt, 0.0, 0.0])),
        gyro_bias=np.zeros(3), filter_gain=0.5)
    out = complementary_update(state, _sample([0, 0, 0], [0, 0, 1e-4]), 0.005)
    assert tilt_error(out) == pytest.approx(tilt, abs=1e-9)


def test_dt_contract():
    state = OrientationState.level()
    with pytest.raises(ValueError):
        complementary_update(state, _sample([0, 0, 0], G), 0.0)


def test_bias_adaptation_tracks_constant_gyro_bias():
    bias = np.array([0.01, -0.005, 0.0])
    state = OrientationState.level(gain=0.05)
    for _ in range(20000):
        state = complementary_update(state, _sample(bias, G), 0.005,
                                     bias_gain=0.02)
    assert np.allclose(state.gyro_bias[:2], bias[:2], atol=2e-3)
    assert tilt_error(state) < 5e-3
