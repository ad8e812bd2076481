"""Run configuration: vehicle, sensor, estimation, planner and control tunables.

Defaults are the calibrated values the acceptance suite runs with; missions
may override any field through a JSON config file.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class VehicleParams:
    wheel_radius: float = 0.25
    track_width: float = 0.95          # effective skid-steer track, inside body width
    wheelbase: float = 1.0
    footprint_length: float = 1.52
    footprint_width: float = 1.15
    ground_clearance: float = 0.22
    body_height: float = 1.15
    mass: float = 190.0
    gear_ratio: float = 45.5
    max_speed: float = 0.8
    max_yaw_rate: float = 1.0
    accel_limit: float = 0.5
    default_slip: float = 1.2
    hazard_slip: float = 1.4


@dataclass
class LidarParams:
    channels: int = 16
    azimuth_steps: int = 512
    max_range: float = 200.0
    vertical_fov_deg: float = 45.0
    sweep_period: float = 0.1
    mount_height: float = 0.75        # sensor z in body frame (body origin at axle height)
    max_channels: int = 64


@dataclass
class NoiseModel:
    """Allan-model sensor noise terms. Same seed yields identical streams."""

    gyro_white_sigma: float = 2.0e-4       # rad/s/sqrt(Hz)
    gyro_bias_walk: float = 2.0e-6         # rad/s^2/sqrt(Hz)
    accel_white_sigma: float = 2.0e-3      # m/s^2/sqrt(Hz)
    accel_bias_walk: float = 2.0e-5
    fog_white_sigma: float = 2.0e-5        # single-axis FOG, lower noise than the IMU gyro
    lidar_range_sigma: float = 0.015       # m
    lidar_dropout_prob: float = 0.02
    rng_seed: int = 0

    def __post_init__(self):
        for name in (
            "gyro_white_sigma",
            "gyro_bias_walk",
            "accel_white_sigma",
            "accel_bias_walk",
            "fog_white_sigma",
            "lidar_range_sigma",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.lidar_dropout_prob <= 1.0:
            raise ValueError("lidar_dropout_prob must be in [0, 1]")

    @classmethod
    def zero(cls, seed: int = 0) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, seed)


@dataclass
class PowerParams:
    battery_capacity_ah: float = 168.0    # motor bank share of the 420 Ah pack
    idle_current_a: float = 0.8           # per motor
    torque_constant: float = 0.045        # Nm/A at the motor, after gear reduction
    rolling_resistance: float = 0.08
    max_current_a: float = 50.0           # per-motor controller clamp


@dataclass
class ImuParams:
    rate_hz: float = 200.0
    fog_rate_hz: float = 100.0


@dataclass
class EstimationConfig:
    filter_gain: float = 0.02
    use_fog: bool = True
    keyframe_translation: float = 1.0
    keyframe_rotation: float = 0.2
    keyframe_interval: float = 10.0
    submap_keyframes: int = 10
    map_voxel: float = 0.2
    registration_voxel: float = 0.25
    registration_range: float = 25.0
    icp_max_iterations: int = 30
    icp_tolerance: float = 1e-5
    icp_max_correspondence: float = 0.4
    icp_min_correspondences: int = 50
    loop_radius: float = 5.0
    loop_min_id_gap: int = 30
    loop_fitness_gate: float = 0.3
    loop_enabled: bool = True
    huber_delta: float = 0.1
    odom_sigma_translation: float = 0.02
    odom_sigma_rotation: float = 0.005
    prediction_sigma_translation: float = 0.05
    prediction_sigma_rotation: float = 0.002
    registration_noise_floor: float = 0.02
    velocity_lowpass: float = 0.35
    surface_cell: float = 0.25
    floor_band: float = 0.4
    roof_band: float = 1.4
    ground_offset: float = 0.25
    normal_neighbors: int = 8
    odometry_rate_hz: float = 10.0


@dataclass
class TerrainConfig:
    extent: float = 15.0
    resolution: float = 0.15
    obstacle_height_max: float = 0.2
    column_buffer: int = 64
    roof_clearance: float = 1.4        # returns above robot z + this are roof, excluded
    rate_hz: float = 5.0
    seed_clearance_radius: float = 2.8  # start-up disc assumed clear at deployment


@dataclass
class PlannerConfig:
    horizon: float = 7.0
    num_primitives: int = 500
    station_step: float = 0.1
    direction_bins: int = 36
    bearing_sigma_deg: float = 30.0
    max_curvature: float = 0.45
    min_path_length: float = 1.5
    goal_tolerance: float = 0.3
    library_seed: int = 20211
    rate_hz: float = 10.0


@dataclass
class ControlConfig:
    lookahead: float = 0.75
    kp_angular: float = 1.2
    ki_angular: float = 0.1
    kp_linear: float = 0.8
    ki_linear: float = 0.05
    integral_clamp: float = 0.5
    follower_rate_hz: float = 20.0
    controller_rate_hz: float = 50.0
    command_timeout: float = 0.5
    recovery_yaw_rate: float = 0.5


@dataclass
class RuntimeConfig:
    base_dt: float = 0.005
    telemetry_rate_hz: float = 5.0
    abort_on_unreachable: bool = True
    log_commands: bool = True
    log_planner: bool = True
    validate_paths: bool = True


@dataclass
class Config:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    lidar: LidarParams = field(default_factory=LidarParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    power: PowerParams = field(default_factory=PowerParams)
    imu: ImuParams = field(default_factory=ImuParams)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        kwargs = {}
        for f in dataclasses.fields(cls):
            sub = data.get(f.name, {})
            sub_cls = f.default_factory
            known = {x.name for x in dataclasses.fields(sub_cls)}
            unknown = set(sub) - known
            if unknown:
                raise ValueError(f"unknown config keys in '{f.name}': {sorted(unknown)}")
            kwargs[f.name] = sub_cls(**sub)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
