"""Localization evaluation against simulated ground truth."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class EvalReport:
    rmse_m: float
    max_error_m: float
    distance_m: float
    duration_s: float
    collisions: int = 0
    waypoints_reached: int = 0
    waypoints_total: int = 0
    status: str = "completed"
    loop_closures: int = 0
    path_violations: int = 0
    battery_used_ah: float = 0.0
    error_series: list = field(default_factory=list)   # [[t, err], ...]
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        return cls(**json.loads(Path(path).read_text()))


def _positions(rows: list[dict]) -> tuple[np.ndarray, np.ndarray]:
    t = np.array([r["t"] for r in rows])
    p = np.array([[r["x"], r["y"], r["z"]] for r in rows])
    return t, p


def evaluate(truth_rows: list[dict], estimate_rows: list[dict],
             align_window: float = 0.05) -> EvalReport:
    """Per-sample Euclidean error between time-aligned truth and estimate.

    Rows are trajectory dicts {t, x, y, z, ...}; estimate samples are matched
    to the nearest truth sample within ``align_window`` seconds.
    """
    if not truth_rows or not estimate_rows:
        raise ValueError("empty trajectory log")
    tt, tp = _positions(truth_rows)
    et, ep = _positions(estimate_rows)

    idx = np.clip(np.searchsorted(tt, et), 0, len(tt) - 1)
    idx_lo = np.maximum(idx - 1, 0)
    pick = np.where(np.abs(tt[idx_lo] - et) < np.abs(tt[idx] - et), idx_lo, idx)
    close = np.abs(tt[pick] - et) <= align_window
    if not close.any():
        raise ValueError("no overlapping samples within the alignment window")

    err = np.linalg.norm(ep[close] - tp[pick[close]], axis=1)
    seg = np.linalg.norm(np.diff(tp, axis=0), axis=1)
    return EvalReport(
        rmse_m=float(np.sqrt(np.mean(err**2))),
        max_error_m=float(err.max()),
        distance_m=float(seg.sum()),
        duration_s=float(tt[-1] - tt[0]),
        error_series=[[float(t), float(e)] for t, e in zip(et[close], err)],
    )


def evaluate_files(truth_path: str | Path, estimate_path: str | Path) -> EvalReport:
    def read(path):
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]

    return evaluate(read(truth_path), read(estimate_path))
