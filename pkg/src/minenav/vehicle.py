"""Skid-steer vehicle: kinematic dynamics on the heightfield and power model.

The platform is velocity-controlled; wheel speeds track commands directly and
the body follows the skid-steer kinematics v = r(wL + wR)/2,
w = r(wR - wL)/(chi * W) with a terrain-dependent slip factor chi. Elevation,
roll and pitch conform to the floor under the four wheel contact points.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .config import PowerParams, VehicleParams
from .geometry import make_transform, rot_z
from .world import GRAVITY, WorldModel, bilinear_nb


class OutOfBoundsError(RuntimeError):
    """Vehicle left the world bounds; missions treat this as an abort fault."""


@dataclass
class VehicleState:
    pose: np.ndarray                 # 4x4 world <- body
    body_velocity: np.ndarray        # (6,) linear xyz then angular xyz, body frame
    wheel_speeds: np.ndarray         # (4,) rad/s: left pair then right pair
    brakes_engaged: bool
    battery_charge: float            # A*h remaining
    time: float
    world_velocity: np.ndarray       # (3,) cached for acceleration differencing
    accel_world: np.ndarray          # (3,) world-frame acceleration over last step

    @classmethod
    def initial(cls, world: WorldModel, x: float, y: float, heading: float,
                params: VehicleParams, power: PowerParams) -> "VehicleState":
        z, roll, pitch = _contact_py(world, x, y, heading, params)
        R = rot_z(heading) @ _rp_matrix(roll, pitch)
        return cls(
            pose=make_transform(R, np.array([x, y, z])),
            body_velocity=np.zeros(6),
            wheel_speeds=np.zeros(4),
            brakes_engaged=False,
            battery_charge=power.battery_capacity_ah,
            time=0.0,
            world_velocity=np.zeros(3),
            accel_world=np.zeros(3),
        )

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def heading(self) -> float:
        return float(np.arctan2(self.pose[1, 0], self.pose[0, 0]))


def _rp_matrix(roll: float, pitch: float) -> np.ndarray:
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    return ry @ rx


def _contact_py(world: WorldModel, x: float, y: float, heading: float,
                params: VehicleParams) -> tuple[float, float, float]:
    return _contact_nb(world.heights, world.origin[0], world.origin[1],
                       world.cell_size, x, y, heading,
                       params.wheelbase, params.track_width, params.wheel_radius)


@njit(cache=True)
def _contact_nb(grid, ox, oy, cell, x, y, heading, wheelbase, track, wheel_radius):
    half_l = wheelbase / 2
    half_w = track / 2
    c = np.cos(heading)
    s = np.sin(heading)
    h = np.empty(4)
    k = 0
    for bx, by in ((half_l, half_w), (-half_l, half_w),
                   (half_l, -half_w), (-half_l, -half_w)):
        wx = x + c * bx - s * by
        wy = y + s * bx + c * by
        h[k] = bilinear_nb(grid, ox, oy, cell, wx, wy)
        k += 1
    z = (h[0] + h[1] + h[2] + h[3]) / 4.0 + wheel_radius
    front = (h[0] + h[2]) / 2.0
    rear = (h[1] + h[3]) / 2.0
    left = (h[0] + h[1]) / 2.0
    right = (h[2] + h[3]) / 2.0
    pitch = -np.arctan2(front - rear, wheelbase)
    roll = np.arctan2(left - right, track)
    return z, roll, pitch


@njit(cache=True)
def _step_kernel(R_old, p_old, v_world_old, vx_body_old, wheels, chi, dt,
                 grid, h_ox, h_oy, h_cell,
                 wheel_radius, track, wheelbase):
    w_left = (wheels[0] + wheels[1]) / 2.0
    w_right = (wheels[2] + wheels[3]) / 2.0
    v = wheel_radius * (w_left + w_right) / 2.0
    omega = wheel_radius * (w_right - w_left) / (chi * track)

    heading = np.arctan2(R_old[1, 0], R_old[0, 0])
    dtheta = omega * dt
    if abs(omega) > 1e-9:
        dx_b = v / omega * np.sin(dtheta)
        dy_b = v / omega * (1.0 - np.cos(dtheta))
    else:
        dx_b = v * dt
        dy_b = 0.0
    c = np.cos(heading)
    s = np.sin(heading)
    nx = p_old[0] + c * dx_b - s * dy_b
    ny = p_old[1] + s * dx_b + c * dy_b
    nheading = heading + dtheta

    z, roll, pitch = _contact_nb(grid, h_ox, h_oy, h_cell, nx, ny, nheading,
                                 wheelbase, track, wheel_radius)

    cr = np.cos(roll)
    sr = np.sin(roll)
    cp = np.cos(pitch)
    sp = np.sin(pitch)
    cy = np.cos(nheading)
    sy = np.sin(nheading)
    R_new = np.empty((3, 3))
    R_new[0, 0] = cy * cp
    R_new[0, 1] = cy * sp * sr - sy * cr
    R_new[0, 2] = cy * sp * cr + sy * sr
    R_new[1, 0] = sy * cp
    R_new[1, 1] = sy * sp * sr + cy * cr
    R_new[1, 2] = sy * sp * cr - cy * sr
    R_new[2, 0] = -sp
    R_new[2, 1] = cp * sr
    R_new[2, 2] = cp * cr

    p_new = np.array([nx, ny, z])
    world_vel = (p_new - p_old) / dt
    accel_world = (world_vel - v_world_old) / dt

    # body rates from the relative rotation log
    Rel = np.empty((3, 3))
    for a in range(3):
        for b in range(3):
            Rel[a, b] = (R_old[0, a] * R_new[0, b] + R_old[1, a] * R_new[1, b]
                         + R_old[2, a] * R_new[2, b])
    tr = Rel[0, 0] + Rel[1, 1] + Rel[2, 2]
    ct = (tr - 1.0) / 2.0
    if ct > 1.0:
        ct = 1.0
    elif ct < -1.0:
        ct = -1.0
    theta = np.arccos(ct)
    if theta < 1e-8:
        f = 0.5
    else:
        f = theta / (2.0 * np.sin(theta))
    wx = f * (Rel[2, 1] - Rel[1, 2]) / dt
    wy = f * (Rel[0, 2] - Rel[2, 0]) / dt
    wz = f * (Rel[1, 0] - Rel[0, 1]) / dt

    v_body = np.empty(3)
    for a in range(3):
        v_body[a] = (R_new[0, a] * world_vel[0] + R_new[1, a] * world_vel[1]
                     + R_new[2, a] * world_vel[2])
    a_long = (v_body[0] - vx_body_old) / dt
    return R_new, p_new, world_vel, accel_world, v_body, wx, wy, wz, v, a_long


def slip_factor(world: WorldModel, x: float, y: float, params: VehicleParams) -> float:
    if world.hazards and world.in_hazard(x, y):
        return params.hazard_slip
    return params.default_slip


def step_dynamics(
    state: VehicleState,
    wheel_cmd: np.ndarray,
    world: WorldModel,
    dt: float,
    params: VehicleParams,
    power: PowerParams,
) -> VehicleState:
    """Advance the ground-truth vehicle state by one tick (dt <= 0.02 s)."""
    if dt <= 0 or dt > 0.02 + 1e-12:
        raise ValueError("dt must be in (0, 0.02]")

    if state.brakes_engaged:
        wheels = np.zeros(4)
    else:
        wheels = np.asarray(wheel_cmd, dtype=float).copy()

    chi = slip_factor(world, state.pose[0, 3], state.pose[1, 3], params)
    (R_new, p_new, world_vel, accel_world, v_body,
     wx, wy, wz, v, a_long) = _step_kernel(
        state.pose[:3, :3], state.pose[:3, 3], state.world_velocity,
        float(state.body_velocity[0]), wheels, chi, dt,
        world.heights, world.origin[0], world.origin[1], world.cell_size,
        params.wheel_radius, params.track_width, params.wheelbase,
    )

    if not world.contains(p_new[0], p_new[1]):
        raise OutOfBoundsError(
            f"vehicle left world bounds at ({p_new[0]:.2f}, {p_new[1]:.2f})"
        )

    torques = wheel_torques(v, a_long, params, power)
    _, currents = power_draw(state, torques, power, params.gear_ratio)
    charge = max(0.0, state.battery_charge - currents.sum() * dt / 3600.0)

    body_vel = np.empty(6)
    body_vel[:3] = v_body
    body_vel[3] = wx
    body_vel[4] = wy
    body_vel[5] = wz

    return replace(
        state,
        pose=make_transform(R_new, p_new),
        body_velocity=body_vel,
        wheel_speeds=wheels,
        battery_charge=charge,
        time=state.time + dt,
        world_velocity=world_vel,
        accel_world=accel_world,
    )


def wheel_torques(v: float, a_long: float, params: VehicleParams,
                  power: PowerParams) -> np.ndarray:
    """Per-wheel drive torque from rolling resistance and acceleration demand."""
    rolling = power.rolling_resistance * params.mass * GRAVITY if abs(v) > 1e-3 else 0.0
    force = rolling + params.mass * abs(a_long)
    return np.full(4, params.wheel_radius * force / 4.0)


def power_draw(state: VehicleState, torques: np.ndarray, power: PowerParams,
               gear_ratio: float = 45.5) -> tuple[float, np.ndarray]:
    """Total watts and per-motor current for the given wheel torques.

    Current is an idle floor plus a torque-proportional term, clamped to the
    per-motor controller limit. Bus voltage is the two-series motor bank.
    """
    motor_torque = np.abs(np.asarray(torques)) / gear_ratio
    currents = power.idle_current_a + motor_torque / power.torque_constant
    currents = np.minimum(currents, power.max_current_a)
    watts = float(currents.sum() * 25.6)
    return watts, currents
