"""Point-to-plane ICP against a voxelized target map with normals.

Correspondences are nearest neighbors within a gate; each iteration solves
the linearized least-squares system and applies the update on the SE(3)
manifold, halving the step if the fixed-correspondence objective would rise,
so the per-iteration objective is non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..geometry import se3_exp, se3_log, transform_inverse, transform_points


class DegenerateRegistrationError(RuntimeError):
    """Too few correspondences to register; caller should fall back to prediction."""


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Average points per voxel; deterministic for a fixed input order."""
    if len(points) == 0:
        return points.reshape(0, 3)
    keys = np.floor(points[:, :3] / voxel).astype(np.int64)
    # pack 3 x int21 into one int64 key
    packed = ((keys[:, 0] + (1 << 20)) << 42) \
        + ((keys[:, 1] + (1 << 20)) << 21) + (keys[:, 2] + (1 << 20))
    order = np.argsort(packed, kind="stable")
    packed_s = packed[order]
    pts_s = points[order, :3]
    boundaries = np.concatenate([[0], np.nonzero(np.diff(packed_s))[0] + 1, [len(pts_s)]])
    sums = np.add.reduceat(pts_s, boundaries[:-1], axis=0)
    counts = np.diff(boundaries)[:, None]
    return sums / counts


def estimate_normals(points: np.ndarray, k: int = 8) -> np.ndarray:
    """Per-point unit normals from local PCA over k nearest neighbors."""
    normals, _ = _pca_normals(points, k)
    return normals


def _pca_normals(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = len(points)
    if n < 3:
        return np.tile(np.array([0.0, 0.0, 1.0]), (n, 1)), np.zeros((n, 4))
    k = min(k, n - 1)
    tree = cKDTree(points)
    dist, idx = tree.query(points, k=k + 1)
    nbrs = points[idx]                                  # (N, k+1, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    vals, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]                             # smallest eigenvalue
    # deterministic sign: positive z, then y, then x
    flip = (normals[:, 2] < 0) | ((normals[:, 2] == 0) & (normals[:, 1] < 0)) \
        | ((normals[:, 2] == 0) & (normals[:, 1] == 0) & (normals[:, 0] < 0))
    normals[flip] *= -1.0
    return normals, np.column_stack([vals, dist[:, -1:]])


def planar_surface_points(points: np.ndarray, k: int = 8,
                          support: np.ndarray | None = None,
                          max_neighbor_radius: float = 0.7,
                          min_planarity: float = 3.0
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Points with well-supported local planes, plus their normals.

    Sweep rings are locally one-dimensional; a plane fit along an isolated
    ring arc has an arbitrary normal and poisons point-to-plane residuals.
    Neighborhoods are searched in ``support`` (defaults to the points
    themselves; pass a denser multi-sweep union for better conditioning) and
    a point is kept when its neighborhood is compact and genuinely planar.
    """
    if len(points) == 0:
        return points.reshape(0, 3), points.reshape(0, 3)
    sup = points if support is None else support
    if len(sup) < k + 1:
        return points.reshape(0, 3), points.reshape(0, 3)
    tree = cKDTree(sup)
    dist, idx = tree.query(points, k=k + 1)
    nbrs = sup[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    vals, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    flip = normals[:, 2] < 0
    normals[flip] *= -1.0
    good = (dist[:, -1] <= max_neighbor_radius) \
        & (vals[:, 1] > min_planarity * np.maximum(vals[:, 0], 1e-12))
    return points[good], normals[good]


@dataclass
class TargetMap:
    """Registration target: points + normals with a prebuilt KD-tree."""

    points: np.ndarray
    normals: np.ndarray
    tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self):
        self.tree = cKDTree(self.points)

    @classmethod
    def from_points(cls, points: np.ndarray, voxel: float | None = None,
                    normal_k: int = 8) -> "TargetMap":
        pts = voxel_downsample(points, voxel) if voxel else np.asarray(points)
        return cls(points=pts, normals=estimate_normals(pts, normal_k))

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class IcpResult:
    transform: np.ndarray
    fitness: float                  # inlier RMS point-to-plane residual
    iterations: int
    correspondences: int
    converged: bool
    objective_steps: list = field(default_factory=list)  # (pre, post) per iteration


def icp_register(
    source: np.ndarray,
    target: TargetMap,
    init: np.ndarray | None = None,
    max_correspondence: float = 1.0,
    max_iterations: int = 30,
    tolerance: float = 1e-5,
    min_correspondences: int = 50,
    prior_information: np.ndarray | None = None,
) -> IcpResult:
    """Register source points onto the target map.

    Returns the world-from-source transform refined from ``init``. With
    ``prior_information`` (6x6, per mean-squared-residual units) the solve is
    additionally anchored toward ``init`` -- the motion-predicted pose -- so
    directions the geometry cannot observe stay at the prediction instead of
    wandering. Raises DegenerateRegistrationError when fewer than
    ``min_correspondences`` inliers support the solve.
    """
    if len(source) == 0:
        raise DegenerateRegistrationError("empty source cloud")
    T = np.eye(4) if init is None else init.copy()
    T_prior = T.copy()
    steps: list[tuple[float, float]] = []
    converged = False
    n_corr = 0
    fitness = float("inf")
    it = 0

    def prior_residual(T_cur: np.ndarray) -> np.ndarray:
        # world-frame twist taking the prior pose to the current pose
        return se3_log(T_cur @ transform_inverse(T_prior))

    for it in range(1, max_iterations + 1):
        src = transform_points(T, source)
        dist, idx = target.tree.query(src, distance_upper_bound=max_correspondence)
        mask = np.isfinite(dist)
        n_corr = int(mask.sum())
        if n_corr < min_correspondences:
            raise DegenerateRegistrationError(
                f"{n_corr} correspondences (< {min_correspondences})"
            )
        p = src[mask]
        q = target.points[idx[mask]]
        nrm = target.normals[idx[mask]]
        r = np.einsum("ni,ni->n", nrm, p - q)

        J = np.hstack([nrm, np.cross(p, nrm)])          # d r / d (t, w)
        H = J.T @ J + 1e-9 * np.eye(6)
        g = J.T @ r
        if prior_information is not None:
            xi0 = prior_residual(T)
            H = H + prior_information
            g = g + prior_information @ xi0

        def objective(T_eval: np.ndarray, residuals: np.ndarray) -> float:
            obj = float(np.mean(residuals * residuals))
            if prior_information is not None:
                xi = prior_residual(T_eval)
                obj += float(xi @ prior_information @ xi) / max(len(residuals), 1)
            return obj

        obj_pre = objective(T, r)
        delta = np.linalg.solve(H, -g)

        # step halving against the fixed-correspondence objective
        obj_post = obj_pre
        for _ in range(8):
            T_new = se3_exp(delta) @ T
            p_new = transform_points(T_new, source[mask])
            r_new = np.einsum("ni,ni->n", nrm, p_new - q)
            obj_post = objective(T_new, r_new)
            if obj_post <= obj_pre + 1e-15:
                break
            delta = delta / 2.0
        else:
            T_new = T
            obj_post = obj_pre
        steps.append((obj_pre, obj_post))
        T = T_new
        rms = float(np.sqrt(np.mean(
            np.einsum("ni,ni->n", nrm,
                      transform_points(T, source[mask]) - q) ** 2)))
        fitness = rms
        if np.linalg.norm(delta) < tolerance:
            converged = True
            break

    return IcpResult(transform=T, fitness=fitness, iterations=it,
                     correspondences=n_corr, converged=converged,
                     objective_steps=steps)
