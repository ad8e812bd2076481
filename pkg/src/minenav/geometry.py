"""Rigid-body geometry helpers: SO(3)/SE(3) maps, quaternions, 2-D angles.

Poses are 4x4 homogeneous matrices throughout the package; rotations are
3x3 matrices, quaternions are (x, y, z, w) to match scipy's convention.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    return np.arctan2(np.sin(a), np.cos(a))


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rotation matrix from a rotation vector (Rodrigues)."""
    theta = float(np.linalg.norm(w))
    W = hat(w)
    if theta < 1e-8:
        # second-order series keeps orthonormality to machine precision
        return np.eye(3) + W + 0.5 * (W @ W)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector from a rotation matrix."""
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < 1e-8:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if theta > np.pi - 1e-6:
        # near pi: extract axis from the symmetric part
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs from off-diagonals
        if axis[0] > 0:
            axis[1] = np.copysign(axis[1], A[0, 1])
            axis[2] = np.copysign(axis[2], A[0, 2])
        elif axis[1] > 0:
            axis[2] = np.copysign(axis[2], A[1, 2])
        axis /= max(np.linalg.norm(axis), _EPS)
        return theta * axis
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * np.sin(theta)) * v


def make_transform(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return T


def transform_inverse(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    t = T[:3, 3]
    Ti = np.eye(4)
    Ti[:3, :3] = R.T
    Ti[:3, 3] = -R.T @ t
    return Ti


def transform_points(T: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply a 4x4 transform to an (N, 3) point array."""
    return pts @ T[:3, :3].T + T[:3, 3]


def se3_exp(xi: np.ndarray) -> np.ndarray:
    """SE(3) exponential. xi = (rho, phi): translation part first."""
    rho, phi = xi[:3], xi[3:]
    R = so3_exp(phi)
    theta = float(np.linalg.norm(phi))
    W = hat(phi)
    if theta < 1e-8:
        V = np.eye(3) + 0.5 * W + (W @ W) / 6.0
    else:
        V = (
            np.eye(3)
            + (1.0 - np.cos(theta)) / theta**2 * W
            + (theta - np.sin(theta)) / theta**3 * (W @ W)
        )
    return make_transform(R, V @ rho)


def se3_log(T: np.ndarray) -> np.ndarray:
    """SE(3) logarithm, inverse of se3_exp."""
    phi = so3_log(T[:3, :3])
    theta = float(np.linalg.norm(phi))
    W = hat(phi)
    if theta < 1e-8:
        Vinv = np.eye(3) - 0.5 * W + (W @ W) / 12.0
    else:
        half = theta / 2.0
        cot = half / np.tan(half)
        Vinv = np.eye(3) - 0.5 * W + (1.0 - cot) / theta**2 * (W @ W)
    return np.concatenate([Vinv @ T[:3, 3], phi])


def renormalize_rotation(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation matrix back onto SO(3) via Gram-Schmidt."""
    x = R[:, 0]
    x = x / np.linalg.norm(x)
    y = R[:, 1] - np.dot(R[:, 1], x) * x
    y = y / np.linalg.norm(y)
    z = np.cross(x, y)
    return np.column_stack([x, y, z])


# quaternions, (x, y, z, w)

def quat_identity() -> np.ndarray:
    return np.array([0.0, 0.0, 0.0, 1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    x1, y1, z1, w1 = q1
    x2, y2, z2, w2 = q2
    return np.array(
        [
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        ]
    )


def quat_from_rotvec(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return quat_normalize(np.array([w[0] / 2.0, w[1] / 2.0, w[2] / 2.0, 1.0]))
    axis = w / theta
    s = np.sin(theta / 2.0)
    return np.array([axis[0] * s, axis[1] * s, axis[2] * s, np.cos(theta / 2.0)])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    return quat_from_rotvec(so3_log(R))


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_matrix(q) @ v


def quat_from_rotvec_many(w: np.ndarray) -> np.ndarray:
    """Vectorized rotation-vector to quaternion, (N, 3) -> (N, 4)."""
    theta = np.linalg.norm(w, axis=1)
    q = np.empty((len(w), 4))
    small = theta < 1e-12
    half = theta / 2.0
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, theta))
    q[:, :3] = w * scale[:, None]
    q[:, 3] = np.cos(half)
    return q


def quat_multiply_many(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Vectorized Hamilton product of (N, 4) quaternion arrays."""
    x1, y1, z1, w1 = q1[:, 0], q1[:, 1], q1[:, 2], q1[:, 3]
    x2, y2, z2, w2 = q2[:, 0], q2[:, 1], q2[:, 2], q2[:, 3]
    return np.column_stack([
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
    ])


def yaw_pitch_roll_from_matrix(R: np.ndarray) -> tuple[float, float, float]:
    """ZYX Euler angles (yaw, pitch, roll) of a rotation matrix."""
    yaw = float(np.arctan2(R[1, 0], R[0, 0]))
    pitch = float(np.arcsin(np.clip(-R[2, 0], -1.0, 1.0)))
    roll = float(np.arctan2(R[2, 1], R[2, 2]))
    return yaw, pitch, roll


def rot_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def planar_pose(x: float, y: float, heading: float, z: float = 0.0) -> np.ndarray:
    """4x4 pose with the given planar position and heading."""
    return make_transform(rot_z(heading), np.array([x, y, z]))
