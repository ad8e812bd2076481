"""Motion compensation for LiDAR sweeps.

Each point is moved from its capture time to the sweep-end frame using a
gyro-integrated incremental rotation and a constant-velocity translation.
With an IMU gap inside the sweep the rotation model degrades to identity
(constant-velocity-only) and the result is flagged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import quat_from_rotvec_many, quat_multiply_many
from ..sensors import ImuSample, LidarScan


@dataclass
class DeskewResult:
    points: np.ndarray              # (M, 3) sensor frame at sweep end
    rings: np.ndarray               # (M,)
    degraded: bool = False
    rejected_points: int = 0
    extra: dict = field(default_factory=dict)


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


def deskew_scan(
    scan: LidarScan,
    imu_window: list[ImuSample],
    velocity_guess: np.ndarray,
    sensor_offset: np.ndarray | None = None,
    use_fog: bool = False,
) -> DeskewResult:
    """Deskew a sweep into its end frame.

    Args:
        scan: raw sweep with per-point time offsets.
        imu_window: samples covering [stamp_start, stamp_end].
        velocity_guess: (3,) body-frame linear velocity over the sweep.
        sensor_offset: sensor position in the body frame (rotation lever arm).
        use_fog: replace the z gyro with the FOG yaw rate where present.
    """
    sweep = scan.stamp_end - scan.stamp_start
    pts = scan.points
    offsets = pts[:, 3]
    keep = (offsets >= 0.0) & (offsets <= sweep)
    rejected = int(len(pts) - keep.sum())
    pts = pts[keep]
    offsets = offsets[keep]
    rings = pts[:, 4].astype(int)
    xyz = pts[:, :3]
    r_s = np.zeros(3) if sensor_offset is None else np.asarray(sensor_offset)

    samples = [s for s in imu_window
               if scan.stamp_start - 0.011 <= s.stamp <= scan.stamp_end + 0.011]
    degraded = len(samples) < 2
    if not degraded:
        stamps = np.array([s.stamp for s in samples])
        gaps = np.diff(stamps)
        nominal = np.median(gaps)
        if gaps.max() > 2.5 * nominal or stamps[0] > scan.stamp_start + 2.5 * nominal \
                or stamps[-1] < scan.stamp_end - 2.5 * nominal:
            degraded = True

    if degraded:
        M = np.broadcast_to(np.eye(3), (len(xyz), 3, 3))
    else:
        omegas = np.array([s.angular_velocity for s in samples])
        if use_fog:
            fog = np.array([s.fog_yaw_rate if s.fog_yaw_rate is not None else np.nan
                            for s in samples])
            # hold the last FOG value over the denser IMU grid
            idx = np.where(np.isfinite(fog))[0]
            if len(idx) > 0:
                filled = np.interp(np.arange(len(fog)), idx, fog[idx])
                omegas = omegas.copy()
                omegas[:, 2] = filled
        # accumulate rotation from sweep start over IMU segments
        stamps_c = np.clip(stamps, scan.stamp_start, scan.stamp_end)
        dts = np.diff(stamps_c, prepend=scan.stamp_start)
        n = len(samples)
        q_acc = np.empty((n + 1, 4))
        q_acc[0] = np.array([0.0, 0.0, 0.0, 1.0])
        increments = quat_from_rotvec_many(omegas * dts[:, None])
        for i in range(n):
            q_acc[i + 1] = quat_multiply_many(q_acc[i:i + 1],
                                              increments[i:i + 1])[0]
        acc_times = np.concatenate([[scan.stamp_start], stamps_c])
        # tail segment to sweep end with the last rate
        if acc_times[-1] < scan.stamp_end - 1e-12:
            tail = quat_from_rotvec_many(
                omegas[-1:] * (scan.stamp_end - acc_times[-1]))
            q_end = quat_multiply_many(q_acc[-1:], tail)[0]
            q_acc = np.vstack([q_acc, q_end])
            acc_times = np.concatenate([acc_times, [scan.stamp_end]])

        # interpolate body rotation at each point's capture time
        t_abs = scan.stamp_start + offsets
        hi = np.searchsorted(acc_times, t_abs, side="right")
        hi = np.clip(hi, 1, len(acc_times) - 1)
        lo = hi - 1
        denom = np.maximum(acc_times[hi] - acc_times[lo], 1e-12)
        s = ((t_abs - acc_times[lo]) / denom)[:, None]
        qa, qb = q_acc[lo], q_acc[hi]
        qb = np.where((np.sum(qa * qb, axis=1) < 0)[:, None], -qb, qb)
        q_tau = (1 - s) * qa + s * qb                       # nlerp
        R_tau = _quats_to_matrices(q_tau)
        R_end = _quats_to_matrices(q_acc[-1:])[0]
        # M = R_acc(end)^T R_acc(tau)
        M = np.einsum("ki,nkj->nij", R_end, R_tau)

    dt_to_end = (sweep - offsets)[:, None]
    moved = xyz + r_s[None, :] - velocity_guess[None, :] * dt_to_end
    out = np.einsum("nij,nj->ni", M, moved) - r_s[None, :]
    return DeskewResult(points=out, rings=rings, degraded=degraded,
                        rejected_points=rejected)
