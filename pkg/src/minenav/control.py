"""Path following and the skid-steer velocity controller.

The follower (20 Hz) steers at a carrot point 0.75 m ahead along the path
with PI loops on heading and along-track error, both integrals clamped. The
velocity controller (50 Hz) mixes linear/angular command into per-side wheel
speeds with a hard linear-acceleration ramp; brakes force zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ControlConfig, VehicleParams
from .geometry import wrap_angle
from .planner import PlannedPath


class UnreachableGoalError(RuntimeError):
    """Rotate-in-place recovery swept a full turn without finding a plan."""


@dataclass
class VelocityCommand:
    linear_x: float
    angular_z: float
    source: str                    # 'follower' | 'teleop'
    stamp: float


@dataclass
class WheelCommand:
    speeds: np.ndarray             # (4,) rad/s, left pair then right pair
    brake_request: bool = False
    stamp: float = 0.0


@dataclass
class FollowerState:
    integral_linear: float = 0.0
    integral_angular: float = 0.0
    path: PlannedPath | None = None
    stale_path: bool = False


def set_path(state: FollowerState, path: PlannedPath) -> None:
    state.path = path
    state.stale_path = False


def _clamp(v: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, v))


def lookahead_point(path: PlannedPath, robot_pose: np.ndarray,
                    lookahead: float = 0.75) -> np.ndarray:
    """Carrot point: path station at (projected arc length + lookahead).

    Clamped to the final pose when the remaining path is shorter than the
    lookahead distance.
    """
    pts = path.poses[:, :2]
    p = robot_pose[:3, 3][:2]
    d2 = np.sum((pts - p[None, :]) ** 2, axis=1)
    nearest = int(np.argmin(d2))
    target_arc = nearest * path.station_step + lookahead
    k = target_arc / path.station_step
    lo = int(np.floor(k))
    if lo >= len(pts) - 1:
        return pts[-1].copy()
    frac = k - lo
    return (1.0 - frac) * pts[lo] + frac * pts[lo + 1]


def remaining_distance(path: PlannedPath, robot_pose: np.ndarray) -> float:
    pts = path.poses[:, :2]
    p = robot_pose[:3, 3][:2]
    d2 = np.sum((pts - p[None, :]) ** 2, axis=1)
    nearest = int(np.argmin(d2))
    return (len(pts) - 1 - nearest) * path.station_step


def follow_path(state: FollowerState, robot_pose: np.ndarray, now: float,
                dt: float, cfg: ControlConfig, vehicle: VehicleParams,
                goal_tolerance: float = 0.3) -> VelocityCommand:
    """One follower tick: heading PI toward the carrot, linear PI on along-track."""
    path = state.path
    if path is None or now - path.stamp > cfg.command_timeout:
        state.stale_path = path is not None
        state.integral_linear = 0.0
        state.integral_angular = 0.0
        return VelocityCommand(0.0, 0.0, "follower", now)

    carrot = lookahead_point(path, robot_pose, cfg.lookahead)
    x, y = robot_pose[0, 3], robot_pose[1, 3]
    heading = float(np.arctan2(robot_pose[1, 0], robot_pose[0, 0]))
    bearing = np.arctan2(carrot[1] - y, carrot[0] - x)
    heading_err = float(wrap_angle(bearing - heading))
    along = remaining_distance(path, robot_pose)

    clamp = cfg.integral_clamp
    state.integral_angular = _clamp(state.integral_angular + heading_err * dt,
                                    -clamp, clamp)
    state.integral_linear = _clamp(state.integral_linear + along * dt,
                                   -clamp, clamp)

    angular = cfg.kp_angular * heading_err + cfg.ki_angular * state.integral_angular
    angular = _clamp(angular, -vehicle.max_yaw_rate, vehicle.max_yaw_rate)

    if along <= goal_tolerance:
        state.integral_linear = 0.0
        return VelocityCommand(0.0, 0.0, "follower", now)

    pi_lin = cfg.kp_linear * along + cfg.ki_linear * state.integral_linear
    linear = _clamp(pi_lin, 0.0, vehicle.max_speed) * max(0.0, np.cos(heading_err))
    return VelocityCommand(float(linear), float(angular), "follower", now)


def mix_and_ramp(cmd: VelocityCommand, prev: WheelCommand, dt: float,
                 cfg: ControlConfig, vehicle: VehicleParams,
                 brake_request: bool = False) -> WheelCommand:
    """Side-speed mixing with the 0.5 m/s^2 per-side acceleration ramp."""
    if brake_request:
        return WheelCommand(speeds=np.zeros(4), brake_request=True, stamp=cmd.stamp)

    v = _clamp(cmd.linear_x, -vehicle.max_speed, vehicle.max_speed)
    w = _clamp(cmd.angular_z, -vehicle.max_yaw_rate, vehicle.max_yaw_rate)
    target_left = v - w * vehicle.track_width / 2.0
    target_right = v + w * vehicle.track_width / 2.0

    r = vehicle.wheel_radius
    prev_left = (prev.speeds[0] + prev.speeds[1]) / 2.0 * r
    prev_right = (prev.speeds[2] + prev.speeds[3]) / 2.0 * r
    max_step = vehicle.accel_limit * dt
    left = prev_left + _clamp(target_left - prev_left, -max_step, max_step)
    right = prev_right + _clamp(target_right - prev_right, -max_step, max_step)

    speeds = np.array([left / r, left / r, right / r, right / r])
    return WheelCommand(speeds=speeds, brake_request=False, stamp=cmd.stamp)


@dataclass
class RecoveryState:
    active: bool = False
    rotated: float = 0.0
    last_heading: float = 0.0


def recovery_rotate(recovery: RecoveryState, goal: np.ndarray,
                    robot_pose: np.ndarray, now: float,
                    cfg: ControlConfig) -> VelocityCommand:
    """Rotate in place toward the goal bearing while no plan exists.

    Raises UnreachableGoalError after a full revolution without a valid plan.
    """
    heading = float(np.arctan2(robot_pose[1, 0], robot_pose[0, 0]))
    if not recovery.active:
        recovery.active = True
        recovery.rotated = 0.0
        recovery.last_heading = heading
    else:
        recovery.rotated += abs(wrap_angle(heading - recovery.last_heading))
        recovery.last_heading = heading
    if recovery.rotated > 2.0 * np.pi:
        raise UnreachableGoalError("rotated a full turn without a valid plan")

    x, y = robot_pose[0, 3], robot_pose[1, 3]
    bearing_err = wrap_angle(np.arctan2(goal[1] - y, goal[0] - x) - heading)
    direction = 1.0 if bearing_err >= 0.0 else -1.0
    return VelocityCommand(0.0, direction * cfg.recovery_yaw_rate, "follower", now)


def exit_recovery(recovery: RecoveryState) -> None:
    recovery.active = False
    recovery.rotated = 0.0
