"""LiDAR-inertial state estimation: orientation filtering, scan deskewing,
scan-to-map registration, keyframed pose graph with loop closures, and
global map assembly."""

from .orientation import OrientationState, complementary_update
from .allan import allan_deviation
from .deskew import deskew_scan
from .icp import (
    DegenerateRegistrationError,
    TargetMap,
    estimate_normals,
    icp_register,
    voxel_downsample,
)
from .surface import SurfaceMap, classify_points, register_scan
from .posegraph import (
    Factor,
    GraphOptimizationError,
    PoseGraph,
    add_odometry_factor,
    optimize_graph,
    total_cost,
)
from .pipeline import Keyframe, LioPipeline, OdometryEstimate, assemble_map

__all__ = [
    "OrientationState",
    "complementary_update",
    "allan_deviation",
    "deskew_scan",
    "DegenerateRegistrationError",
    "TargetMap",
    "estimate_normals",
    "icp_register",
    "voxel_downsample",
    "Factor",
    "GraphOptimizationError",
    "PoseGraph",
    "add_odometry_factor",
    "optimize_graph",
    "total_cost",
    "SurfaceMap",
    "classify_points",
    "register_scan",
    "Keyframe",
    "LioPipeline",
    "OdometryEstimate",
    "assemble_map",
]
