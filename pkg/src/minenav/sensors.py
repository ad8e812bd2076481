"""LiDAR and IMU simulation.

Rays are cast against the heightfield, pillar prisms and the optional roof
plane with per-point sweep timestamps, so a moving vehicle produces genuinely
motion-distorted scans. The IMU emits body rates and specific force with
Allan-model white noise and random-walk biases; the single-axis FOG channel
carries yaw rate at half the IMU rate with its own (smaller) noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .config import ImuParams, LidarParams, NoiseModel
from .world import GRAVITY, WorldModel, bilinear_nb


@dataclass
class LidarScan:
    stamp_start: float
    stamp_end: float
    points: np.ndarray          # (M, 5): x, y, z sensor frame, time offset, ring
    channels: int
    max_range: float
    vertical_fov: float

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class ImuSample:
    stamp: float
    angular_velocity: np.ndarray      # (3,) rad/s body frame
    linear_acceleration: np.ndarray   # (3,) m/s^2 specific force, includes gravity
    fog_yaw_rate: float | None        # rad/s, present on the 100 Hz grid only


FLOOR_MARCH_CAP = 80.0   # floor returns farther than this are omitted


@njit(cache=True, parallel=True)
def _raycast_kernel(origins, dirs, grid, h_ox, h_oy, h_cell, max_slope,
                    slabs, roof_z, has_roof, max_range, out_ranges):
    n = origins.shape[0]
    n_slabs = slabs.shape[0]
    for i in prange(n):
        ox, oy, oz = origins[i, 0], origins[i, 1], origins[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        best = np.inf

        # floor: fixed-point iteration (fast path), marching fallback
        if dz < -1e-9:
            d_xy = np.sqrt(dx * dx + dy * dy)
            t = 0.0
            converged = False
            if -dz > 2.0 * max_slope * d_xy:
                h0 = bilinear_nb(grid, h_ox, h_oy, h_cell, ox, oy)
                t = (h0 - oz) / dz
                for _ in range(16):
                    if t < 0.0:
                        t = 0.0
                    px = ox + t * dx
                    py = oy + t * dy
                    h = bilinear_nb(grid, h_ox, h_oy, h_cell, px, py)
                    t_new = (h - oz) / dz
                    if abs(t_new - t) < 1e-12:
                        t = t_new
                        converged = True
                        break
                    t = t_new
                if converged:
                    px = ox + t * dx
                    py = oy + t * dy
                    h = bilinear_nb(grid, h_ox, h_oy, h_cell, px, py)
                    if abs(oz + t * dz - h) > 1e-9:
                        converged = False
            if not converged:
                # coarse march then bisection on f(t) = ray_z - floor
                step = 0.8
                cap = min(max_range, FLOOR_MARCH_CAP)
                t_lo = 0.0
                f_lo = oz - bilinear_nb(grid, h_ox, h_oy, h_cell, ox, oy)
                t_hit = -1.0
                if f_lo > 0.0:
                    t_m = step
                    while t_m <= cap + step:
                        px = ox + t_m * dx
                        py = oy + t_m * dy
                        f = (oz + t_m * dz) - bilinear_nb(grid, h_ox, h_oy,
                                                           h_cell, px, py)
                        if f <= 0.0:
                            a, b = t_lo, t_m
                            for _ in range(42):
                                mid = 0.5 * (a + b)
                                px = ox + mid * dx
                                py = oy + mid * dy
                                fm = (oz + mid * dz) - bilinear_nb(
                                    grid, h_ox, h_oy, h_cell, px, py)
                                if fm > 0.0:
                                    a = mid
                                else:
                                    b = mid
                            t_hit = 0.5 * (a + b)
                            break
                        t_lo = t_m
                        t_m += step
                    if t_hit > 0.0:
                        t = t_hit
                        converged = True
            if converged and 1e-6 < t < best:
                best = t

        if has_roof and dz > 1e-9:
            t = (roof_z - oz) / dz
            if 1e-6 < t < best:
                best = t

        for k in range(n_slabs):
            tmin = 0.0
            tmax = np.inf
            hit = True
            for axis in range(3):
                if axis == 0:
                    o, d, lo, hi = ox, dx, slabs[k, 0], slabs[k, 1]
                elif axis == 1:
                    o, d, lo, hi = oy, dy, slabs[k, 2], slabs[k, 3]
                else:
                    o, d, lo, hi = oz, dz, slabs[k, 4], slabs[k, 5]
                if abs(d) < 1e-12:
                    if o < lo or o > hi:
                        hit = False
                        break
                else:
                    t1 = (lo - o) / d
                    t2 = (hi - o) / d
                    if t1 > t2:
                        t1, t2 = t2, t1
                    if t1 > tmin:
                        tmin = t1
                    if t2 < tmax:
                        tmax = t2
                    if tmin > tmax:
                        hit = False
                        break
            if hit and 1e-6 < tmin < best:
                best = tmin

        out_ranges[i] = best


class ConstantTwistSampler:
    """Sensor pose over a sweep synthesized from one pose + constant twist.

    The pose is the sweep-end pose; earlier samples rewind the twist. Used by
    direct raycast calls; the mission runtime supplies true pose history
    instead.
    """

    def __init__(self, pose_end: np.ndarray, linear: np.ndarray,
                 angular: np.ndarray, t_end: float):
        self.pose_end = pose_end
        self.linear = np.asarray(linear, dtype=float)
        self.angular = np.asarray(angular, dtype=float)
        self.t_end = t_end

    def sample(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        from .geometry import quat_from_matrix, quat_from_rotvec_many, quat_multiply_many

        R_end = self.pose_end[:3, :3]
        p_end = self.pose_end[:3, 3]
        q_end = quat_from_matrix(R_end)
        back = self.t_end - np.asarray(times)
        q_rel = quat_from_rotvec_many(-back[:, None] * self.angular[None, :])
        quats = quat_multiply_many(np.broadcast_to(q_end, (len(back), 4)), q_rel)
        R = _quats_to_matrices(quats)
        trans = p_end[None, :] - np.einsum("nij,nj->ni", R, back[:, None] * self.linear)
        return quats, trans


def _quats_to_matrices(quats: np.ndarray) -> np.ndarray:
    q = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    x, y, z, w = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - z * w)
    R[:, 0, 2] = 2 * (x * z + y * w)
    R[:, 1, 0] = 2 * (x * y + z * w)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - x * w)
    R[:, 2, 0] = 2 * (x * z - y * w)
    R[:, 2, 1] = 2 * (y * z + x * w)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def local_ray_directions(params: LidarParams) -> tuple[np.ndarray, np.ndarray]:
    """Sensor-frame unit directions (A, C, 3) and elevation angles (C,)."""
    elev = np.deg2rad(
        np.linspace(-params.vertical_fov_deg / 2, params.vertical_fov_deg / 2,
                    params.channels)
    )
    az = 2 * np.pi * np.arange(params.azimuth_steps) / params.azimuth_steps
    ce, se = np.cos(elev), np.sin(elev)
    ca, sa = np.cos(az), np.sin(az)
    dirs = np.empty((params.azimuth_steps, params.channels, 3))
    dirs[:, :, 0] = ca[:, None] * ce[None, :]
    dirs[:, :, 1] = sa[:, None] * ce[None, :]
    dirs[:, :, 2] = se[None, :]
    return dirs, elev


def raycast_lidar(
    world: WorldModel,
    pose_sampler,
    t_end: float,
    params: LidarParams,
    noise: NoiseModel | None = None,
    rng: np.random.Generator | None = None,
) -> LidarScan:
    """Cast one full sweep ending at ``t_end``.

    ``pose_sampler.sample(times)`` must return the sensor pose (quaternions
    and translations) at absolute times inside the sweep window.
    """
    A, C = params.azimuth_steps, params.channels
    sweep = params.sweep_period
    offsets = sweep * np.arange(A) / A
    times = t_end - sweep + offsets

    quats, trans = pose_sampler.sample(times)
    R = _quats_to_matrices(quats)                        # (A, 3, 3)
    dirs_local, _ = local_ray_directions(params)         # (A, C, 3)
    dirs_world = np.einsum("aij,acj->aci", R, dirs_local)
    origins = np.broadcast_to(trans[:, None, :], (A, C, 3))

    flat_o = np.ascontiguousarray(origins.reshape(-1, 3))
    flat_d = np.ascontiguousarray(dirs_world.reshape(-1, 3))
    ranges = np.empty(A * C)
    roof = world.roof_height
    _raycast_kernel(
        flat_o, flat_d, world.heights, world.origin[0], world.origin[1],
        world.cell_size, world.max_slope, world.slabs,
        roof if roof is not None else 0.0, roof is not None,
        params.max_range, ranges,
    )

    if noise is not None and rng is not None:
        if noise.lidar_range_sigma > 0:
            ranges = ranges + noise.lidar_range_sigma * rng.standard_normal(A * C)
        keep_noise = rng.random(A * C) >= noise.lidar_dropout_prob
    else:
        keep_noise = np.ones(A * C, dtype=bool)

    valid = np.isfinite(ranges) & (ranges <= params.max_range) & (ranges > 0.05)
    valid &= keep_noise
    ranges_v = ranges[valid]
    dirs_flat = dirs_local.reshape(-1, 3)[valid]
    offs = np.repeat(offsets, C)[valid]
    rings = np.tile(np.arange(C), A)[valid]

    points = np.column_stack([
        dirs_flat * ranges_v[:, None],
        offs,
        rings.astype(float),
    ])
    return LidarScan(
        stamp_start=t_end - sweep,
        stamp_end=t_end,
        points=points,
        channels=C,
        max_range=params.max_range,
        vertical_fov=params.vertical_fov_deg,
    )


class ImuSimulator:
    """Noisy IMU + FOG sampling on the 200 Hz tick grid."""

    def __init__(self, noise: NoiseModel, params: ImuParams,
                 rng: np.random.Generator):
        self.noise = noise
        self.params = params
        self.rng = rng
        self.gyro_bias = np.zeros(3)
        self.accel_bias = np.zeros(3)
        self._tick = 0
        self._fog_every = int(round(params.rate_hz / params.fog_rate_hz))

    def sample(self, omega_body: np.ndarray, specific_force_body: np.ndarray,
               t: float) -> ImuSample:
        n = self.noise
        dt = 1.0 / self.params.rate_hz
        sq = np.sqrt(dt)
        self.gyro_bias = self.gyro_bias + n.gyro_bias_walk * sq * self.rng.standard_normal(3)
        self.accel_bias = self.accel_bias + n.accel_bias_walk * sq * self.rng.standard_normal(3)
        gyro = (omega_body + self.gyro_bias
                + n.gyro_white_sigma / sq * self.rng.standard_normal(3))
        accel = (specific_force_body + self.accel_bias
                 + n.accel_white_sigma / sq * self.rng.standard_normal(3))
        fog = None
        if self._tick % self._fog_every == 0:
            dt_fog = 1.0 / self.params.fog_rate_hz
            fog = float(omega_body[2]
                        + n.fog_white_sigma / np.sqrt(dt_fog) * self.rng.standard_normal())
        self._tick += 1
        return ImuSample(stamp=t, angular_velocity=gyro,
                         linear_acceleration=accel, fog_yaw_rate=fog)


def true_imu_signals(state) -> tuple[np.ndarray, np.ndarray]:
    """Body rates and specific force (gravity included) from ground truth."""
    R = state.pose[:3, :3]
    g_world = np.array([0.0, 0.0, -GRAVITY])
    specific = R.T @ (state.accel_world - g_world)
    return state.body_velocity[3:].copy(), specific
