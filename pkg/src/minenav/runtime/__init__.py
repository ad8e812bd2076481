"""Deterministic fixed-step mission runtime, evaluation harness and console service."""

from .evalreport import EvalReport, evaluate
from .mission import (
    ControlMode,
    MissionRunner,
    MissionSpec,
    TelemetryFrame,
    arbitrate,
    run_mission,
)

__all__ = [
    "EvalReport",
    "evaluate",
    "ControlMode",
    "MissionRunner",
    "MissionSpec",
    "TelemetryFrame",
    "arbitrate",
    "run_mission",
]
