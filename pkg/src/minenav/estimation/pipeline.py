"""LiDAR-inertial odometry pipeline.

Per sweep: deskew with gyro increments, predict with the orientation filter
and constant velocity, refine against a sliding submap of recent keyframes
(height-grid ground/roof plus point-to-plane structure), then maintain the
keyframed pose graph (odometry factors, distance-based loop closures, LM
optimization) and the global map.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from ..config import EstimationConfig
from ..geometry import (
    quat_from_matrix,
    quat_to_matrix,
    se3_log,
    so3_log,
    transform_inverse,
    transform_points,
)
from ..sensors import ImuSample, LidarScan
from .deskew import deskew_scan
from .icp import DegenerateRegistrationError, voxel_downsample
from .orientation import OrientationState, complementary_update
from .posegraph import Factor, PoseGraph, add_odometry_factor, optimize_graph
from .surface import SurfaceMap, classify_points, register_scan


@dataclass
class Keyframe:
    id: int
    stamp: float
    pose: np.ndarray                     # mirrors the graph node pose
    deskewed_cloud: np.ndarray           # body frame, registration resolution
    downsampled_cloud: np.ndarray        # body frame, map resolution (float32)
    floor_points: np.ndarray             # body-frame height-class subsets
    struct_points: np.ndarray
    roof_points: np.ndarray


@dataclass
class OdometryEstimate:
    stamp: float
    pose: np.ndarray
    velocity: np.ndarray                 # (3,) world frame m/s
    covariance_diag: np.ndarray          # (6,)


@dataclass
class GlobalMap:
    points: np.ndarray                   # (N, 3) world frame
    voxel: float


def select_keyframe(last_kf, current_pose: np.ndarray,
                    current_stamp: float, cfg: EstimationConfig) -> bool:
    """Keyframe when translation, rotation or elapsed time exceeds thresholds."""
    if last_kf is None:
        return True
    dt = current_stamp - last_kf.stamp
    dp = float(np.linalg.norm(current_pose[:3, 3] - last_kf.pose[:3, 3]))
    drot = float(np.linalg.norm(
        so3_log(last_kf.pose[:3, :3].T @ current_pose[:3, :3])))
    return (dp > cfg.keyframe_translation or drot > cfg.keyframe_rotation
            or dt > cfg.keyframe_interval)


def build_submap(keyframes: list[Keyframe], nodes: list[np.ndarray],
                 cfg: EstimationConfig) -> SurfaceMap:
    floor, struct, roof = [], [], []
    for k in keyframes:
        T = nodes[k.id]
        floor.append(transform_points(T, k.floor_points))
        struct.append(transform_points(T, k.struct_points))
        roof.append(transform_points(T, k.roof_points))
    return SurfaceMap.build(
        np.vstack(floor) if floor else np.zeros((0, 3)),
        np.vstack(struct) if struct else np.zeros((0, 3)),
        np.vstack(roof) if roof else np.zeros((0, 3)),
        cell=cfg.surface_cell,
    )


def detect_loop_closure(graph: PoseGraph, keyframes: list[Keyframe],
                        new_kf: Keyframe, cfg: EstimationConfig):
    """Distance-gated, registration-verified loop proposal.

    Candidate is the nearest keyframe at least ``loop_min_id_gap`` ids older
    within ``loop_radius``; the new cloud is registered against the
    candidate's local submap and accepted under the fitness gate.
    """
    candidates = [k for k in keyframes
                  if new_kf.id - k.id > cfg.loop_min_id_gap]
    if not candidates:
        return None
    p_new = graph.nodes[new_kf.id][:3, 3]
    dists = [float(np.linalg.norm(graph.nodes[k.id][:3, 3] - p_new))
             for k in candidates]
    best = int(np.argmin(dists))
    if dists[best] > cfg.loop_radius:
        return None
    cand = candidates[best]
    local = [k for k in keyframes if abs(k.id - cand.id) <= 2]
    surface = build_submap(local, graph.nodes, cfg)
    try:
        res = register_scan(
            new_kf.floor_points, new_kf.struct_points, new_kf.roof_points,
            surface, init=graph.nodes[new_kf.id],
            max_correspondence=cfg.icp_max_correspondence * 2,
            max_iterations=cfg.icp_max_iterations,
            tolerance=cfg.icp_tolerance,
            min_correspondences=cfg.icp_min_correspondences,
        )
    except DegenerateRegistrationError:
        return None
    if res.fitness >= cfg.loop_fitness_gate:
        return None
    relative = transform_inverse(graph.nodes[cand.id]) @ res.transform
    info = _loop_information(res.fitness)
    return Factor("loop", cand.id, new_kf.id, relative, info, robust=True)


def _odometry_information(cfg: EstimationConfig) -> np.ndarray:
    return np.diag([1.0 / cfg.odom_sigma_translation**2] * 3
                   + [1.0 / cfg.odom_sigma_rotation**2] * 3)


def _loop_information(fitness: float) -> np.ndarray:
    sigma_t = max(fitness, 0.01)
    sigma_r = 0.5 * sigma_t
    return np.diag([1.0 / sigma_t**2] * 3 + [1.0 / sigma_r**2] * 3)


def assemble_map(keyframes: list[Keyframe], nodes: list[np.ndarray],
                 voxel: float) -> GlobalMap:
    """Merge keyframe clouds at current node poses into one voxelized cloud.

    Merging happens on a voxel grid tied to the anchor node's frame, so
    rigidly transforming every node pose rigidly transforms the output.
    """
    if not keyframes:
        return GlobalMap(points=np.zeros((0, 3)), voxel=voxel)
    anchor = nodes[keyframes[0].id]
    A = transform_inverse(anchor)
    chunks = []
    for kf in keyframes:
        M = A @ nodes[kf.id]
        chunks.append(transform_points(M, kf.downsampled_cloud.astype(float)))
    merged = voxel_downsample(np.vstack(chunks), voxel)
    return GlobalMap(points=transform_points(anchor, merged), voxel=voxel)


class LioPipeline:
    """Streaming estimator: feed IMU at 200 Hz and sweeps at 10 Hz."""

    def __init__(self, cfg: EstimationConfig, start_pose: np.ndarray,
                 sensor_offset: np.ndarray, imu_rate: float = 200.0):
        self.cfg = cfg
        self.sensor_offset = np.asarray(sensor_offset, dtype=float)
        self.pose = start_pose.copy()
        self.world_velocity = np.zeros(3)
        self.imu_rate = imu_rate
        self.orientation = OrientationState(
            attitude=quat_from_matrix(start_pose[:3, :3]), gyro_bias=np.zeros(3),
            filter_gain=cfg.filter_gain)
        self._q_at_last_scan = self.orientation.attitude.copy()
        self._last_fog = None
        self.imu_buffer: deque = deque(maxlen=int(imu_rate * 0.4))
        self.graph = PoseGraph(huber_delta=cfg.huber_delta)
        self.keyframes: list[Keyframe] = []
        self.submap: SurfaceMap | None = None
        self.last_stamp: float | None = None
        self.latest_world_points = np.zeros((0, 3))
        self.last_fitness = 0.0
        self.degenerate_frames = 0
        self.loops_accepted = 0
        self._loops_since_opt = 0
        self._last_opt_time = 0.0
        self.optimizations = 0
        self.map_range = 20.0
        nf2 = cfg.registration_noise_floor ** 2
        self._prior_information = nf2 * np.diag(
            [1.0 / cfg.prediction_sigma_translation ** 2] * 3
            + [1.0 / cfg.prediction_sigma_rotation ** 2] * 3)

    # -- inputs --------------------------------------------------------------

    def add_imu(self, sample: ImuSample) -> None:
        if self.cfg.use_fog:
            if sample.fog_yaw_rate is not None:
                self._last_fog = sample.fog_yaw_rate
            if self._last_fog is not None:
                av = sample.angular_velocity.copy()
                av[2] = self._last_fog
                sample = replace(sample, angular_velocity=av)
        self.imu_buffer.append(sample)
        dt = 1.0 / self.imu_rate
        self.orientation = complementary_update(self.orientation, sample, dt,
                                                bias_gain=0.001)

    def _classify_body(self, body_pts: np.ndarray, pose: np.ndarray):
        world = transform_points(pose, body_pts)
        ground_z = float(pose[2, 3]) - self.cfg.ground_offset
        floor, struct, roof = classify_points(
            world, ground_z, float(pose[2, 3]),
            floor_band=self.cfg.floor_band,
            roof_clearance=self.cfg.roof_band)
        return body_pts[floor], body_pts[struct], body_pts[roof]

    def process_scan(self, scan: LidarScan) -> OdometryEstimate:
        sweep_dt = scan.stamp_end - (self.last_stamp if self.last_stamp is not None
                                     else scan.stamp_end - 0.1)
        R_prev = self.pose[:3, :3]
        v_body = R_prev.T @ self.world_velocity

        dsk = deskew_scan(scan, list(self.imu_buffer), v_body,
                          sensor_offset=self.sensor_offset, use_fog=False)
        body_pts = dsk.points + self.sensor_offset[None, :]

        rng = np.linalg.norm(body_pts, axis=1)
        src_pts = body_pts[rng <= self.cfg.registration_range]
        source = voxel_downsample(src_pts, self.cfg.registration_voxel)

        # IMU-predicted initialization
        R_f_prev = quat_to_matrix(self._q_at_last_scan)
        R_f_now = quat_to_matrix(self.orientation.attitude)
        T_pred = np.eye(4)
        T_pred[:3, :3] = R_prev @ (R_f_prev.T @ R_f_now)
        T_pred[:3, 3] = self.pose[:3, 3] + self.world_velocity * sweep_dt

        if self.submap is None:
            pose_new = T_pred
        else:
            floor_b, struct_b, roof_b = self._classify_body(source, T_pred)
            try:
                res = register_scan(
                    floor_b, struct_b, roof_b, self.submap, init=T_pred,
                    prior_information=self._prior_information,
                    max_correspondence=self.cfg.icp_max_correspondence,
                    max_iterations=self.cfg.icp_max_iterations,
                    tolerance=self.cfg.icp_tolerance,
                    min_correspondences=self.cfg.icp_min_correspondences,
                )
                pose_new = res.transform
                self.last_fitness = res.fitness
            except DegenerateRegistrationError:
                pose_new = T_pred
                self.degenerate_frames += 1

        if self.last_stamp is not None and sweep_dt > 0:
            raw_v = (pose_new[:3, 3] - self.pose[:3, 3]) / sweep_dt
            a = self.cfg.velocity_lowpass
            self.world_velocity = (1.0 - a) * self.world_velocity + a * raw_v
        self.pose = pose_new
        self.last_stamp = scan.stamp_end
        self._q_at_last_scan = self.orientation.attitude.copy()
        self.latest_world_points = transform_points(self.pose, body_pts)

        last_kf = self.keyframes[-1] if self.keyframes else None
        if select_keyframe(last_kf, self.pose, scan.stamp_end, self.cfg):
            self._add_keyframe(scan.stamp_end, source, body_pts)

        f = max(self.last_fitness, 1e-3)
        cov = np.array([f**2] * 3 + [(0.2 * f) ** 2] * 3)
        return OdometryEstimate(stamp=scan.stamp_end, pose=self.pose.copy(),
                                velocity=self.world_velocity.copy(),
                                covariance_diag=cov)

    # -- keyframes and graph maintenance ---------------------------------------

    def _add_keyframe(self, stamp: float, source: np.ndarray,
                      body_pts: np.ndarray) -> None:
        rng = np.linalg.norm(body_pts, axis=1)
        map_cloud = voxel_downsample(
            body_pts[rng <= self.map_range], self.cfg.map_voxel
        ).astype(np.float32)
        floor_b, struct_b, roof_b = self._classify_body(source, self.pose)
        kf = Keyframe(
            id=len(self.keyframes), stamp=stamp, pose=self.pose.copy(),
            deskewed_cloud=source, downsampled_cloud=map_cloud,
            floor_points=floor_b, struct_points=struct_b, roof_points=roof_b,
        )
        node_id = self.graph.add_node(self.pose)
        assert node_id == kf.id
        if kf.id == 0:
            self.graph.add_prior(0, self.pose, np.diag([1e6] * 6))
        else:
            rel = transform_inverse(self.keyframes[-1].pose) @ self.pose
            add_odometry_factor(self.graph, kf.id - 1, kf.id, rel,
                                _odometry_information(self.cfg))
        self.keyframes.append(kf)

        if self.cfg.loop_enabled and kf.id > 0:
            loop = detect_loop_closure(self.graph, self.keyframes, kf, self.cfg)
            if loop is not None:
                self.graph.factors.append(loop)
                self.loops_accepted += 1
                self._loops_since_opt += 1
                r = se3_log(transform_inverse(loop.measurement)
                            @ transform_inverse(self.graph.nodes[loop.i])
                            @ self.graph.nodes[loop.j])
                big_residual = float(np.linalg.norm(r[:3])) > 0.05
                overdue = stamp - self._last_opt_time > 60.0
                if big_residual or overdue or self._loops_since_opt >= 25:
                    self._optimize(stamp)
        self._rebuild_submap()

    def _optimize(self, stamp: float) -> None:
        last_id = len(self.keyframes) - 1
        before = self.graph.nodes[last_id].copy()
        optimize_graph(self.graph)
        self.optimizations += 1
        self._last_opt_time = stamp
        self._loops_since_opt = 0
        for kf in self.keyframes:
            kf.pose = self.graph.nodes[kf.id].copy()
        correction = self.graph.nodes[last_id] @ transform_inverse(before)
        self.pose = correction @ self.pose

    def finalize(self) -> None:
        """Run a final optimization if any loop factors are pending."""
        if self.cfg.loop_enabled and self.graph.num_loop_factors > 0 \
                and self._loops_since_opt > 0:
            self._optimize(self.last_stamp or 0.0)
            self._rebuild_submap()

    def _rebuild_submap(self) -> None:
        recent = self.keyframes[-self.cfg.submap_keyframes:]
        self.submap = build_submap(recent, self.graph.nodes, self.cfg)

    # -- outputs ----------------------------------------------------------------

    def global_map(self, voxel: float | None = None) -> GlobalMap:
        return assemble_map(self.keyframes, self.graph.nodes,
                            voxel or self.cfg.map_voxel)

    def submap_points_near(self, center: np.ndarray, radius: float) -> np.ndarray:
        if self.submap is None:
            return np.zeros((0, 3))
        pts = [self.submap.seed_points(center, radius)]
        if len(self.submap.struct_points):
            d = np.linalg.norm(
                self.submap.struct_points[:, :2] - center[None, :2], axis=1)
            pts.append(self.submap.struct_points[d <= radius])
        return np.vstack(pts)
