"""Complementary attitude filter.

Gyro integration corrected toward the accelerometer gravity direction. The
correction is the minimal rotation between predicted and measured up vectors,
scaled by the filter gain, so for a stationary platform the tilt error decays
exactly geometrically and heading is never touched by the correction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..geometry import (
    quat_from_rotvec,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
)
from ..sensors import ImuSample

FREE_FALL_ACCEL = 1.0  # m/s^2; below this the gravity reference is unusable


@dataclass
class OrientationState:
    attitude: np.ndarray            # quaternion (x, y, z, w), body -> world
    gyro_bias: np.ndarray           # (3,) rad/s
    filter_gain: float = 0.02

    @classmethod
    def level(cls, yaw: float = 0.0, gain: float = 0.02) -> "OrientationState":
        return cls(
            attitude=quat_from_rotvec(np.array([0.0, 0.0, yaw])),
            gyro_bias=np.zeros(3),
            filter_gain=gain,
        )


def complementary_update(state: OrientationState, imu: ImuSample, dt: float,
                         bias_gain: float = 0.0) -> OrientationState:
    """One filter step: integrate gyro, then pull tilt toward measured gravity."""
    if dt <= 0:
        raise ValueError("dt must be > 0")

    omega = imu.angular_velocity - state.gyro_bias
    q = quat_multiply(state.attitude, quat_from_rotvec(omega * dt))

    accel = imu.linear_acceleration
    norm = float(np.linalg.norm(accel))
    bias = state.gyro_bias
    if norm >= FREE_FALL_ACCEL:
        up_meas = accel / norm                      # specific force points up at rest
        R = quat_to_matrix(q)
        up_pred = R.T @ np.array([0.0, 0.0, 1.0])
        axis = np.cross(up_pred, up_meas)
        s = float(np.linalg.norm(axis))
        c = float(np.clip(np.dot(up_pred, up_meas), -1.0, 1.0))
        angle = float(np.arctan2(s, c))
        if s > 1e-12:
            axis = axis / s
            # body-frame correction delta: R <- R * exp(-gain * angle * axis)
            delta = -state.filter_gain * angle * axis
            q = quat_multiply(q, quat_from_rotvec(delta))
            if bias_gain > 0.0:
                bias = bias + bias_gain * angle * axis * np.array([1.0, 1.0, 0.0])
    return replace(state, attitude=quat_normalize(q), gyro_bias=bias)


def tilt_error(state: OrientationState) -> float:
    """Angle between the filter's up direction and world vertical, rad."""
    R = quat_to_matrix(state.attitude)
    up = R.T @ np.array([0.0, 0.0, 1.0])
    return float(np.arctan2(np.hypot(up[0], up[1]), up[2]))
