"""Ring buffer of recent sensor poses with interpolating lookup.

Feeds the LiDAR raycaster the true pose at every per-point capture time, so
simulated sweeps carry real motion distortion. Sampling interpolates between
200 Hz ticks (normalized-lerp quaternions, linear translation); the same
object is the canonical pose source for the on-surface sensor invariant.
"""

from __future__ import annotations

import numpy as np

from ..geometry import quat_from_matrix


class PoseHistory:
    def __init__(self, capacity: int = 64):
        self.capacity = capacity
        self.times = np.full(capacity, -np.inf)
        self.quats = np.zeros((capacity, 4))
        self.trans = np.zeros((capacity, 3))
        self.count = 0

    def record(self, t: float, pose: np.ndarray, offset: np.ndarray) -> None:
        """Append the sensor pose (body pose composed with a fixed offset)."""
        i = self.count % self.capacity
        self.times[i] = t
        self.quats[i] = quat_from_matrix(pose[:3, :3])
        self.trans[i] = pose[:3, 3] + pose[:3, :3] @ offset
        self.count += 1

    def _ordered(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = min(self.count, self.capacity)
        idx = (np.arange(n) + (self.count - n)) % self.capacity
        return self.times[idx], self.quats[idx], self.trans[idx]

    def sample(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ts, qs, ps = self._ordered()
        if len(ts) == 0:
            raise ValueError("pose history is empty")
        t = np.clip(np.asarray(times), ts[0], ts[-1])
        hi = np.clip(np.searchsorted(ts, t, side="right"), 1, len(ts) - 1) \
            if len(ts) > 1 else np.ones(len(t), dtype=int)
        if len(ts) == 1:
            return np.tile(qs[0], (len(t), 1)), np.tile(ps[0], (len(t), 1))
        lo = hi - 1
        denom = np.maximum(ts[hi] - ts[lo], 1e-12)
        s = ((t - ts[lo]) / denom)[:, None]
        qa, qb = qs[lo], qs[hi]
        qb = np.where((np.sum(qa * qb, axis=1) < 0)[:, None], -qb, qb)
        q = (1 - s) * qa + s * qb
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        p = (1 - s) * ps[lo] + s * ps[hi]
        return q, p
