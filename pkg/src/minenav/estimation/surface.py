"""Hybrid scan-to-map registration target.

Sweep rings are dense along azimuth but meters apart radially, so nearest
neighbor plane fits on a single sweep tilt along ring arcs and create false
minima where rings coincide. Ground and roof are therefore modeled as height
grids (mean elevation per cell; bilinear with analytic gradients, immune to
ring aliasing) and only genuinely three-dimensional structure -- walls,
pillars, boulders -- is matched point-to-plane with per-correspondence plane
fits validated for planarity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..geometry import se3_exp, se3_log, transform_inverse, transform_points
from .icp import DegenerateRegistrationError, IcpResult


def classify_points(points_world: np.ndarray, ground_z: float,
                    body_z: float, floor_band: float = 0.4,
                    roof_clearance: float = 1.4):
    """Split world points into floor / structure / roof height classes."""
    z = points_world[:, 2]
    floor = z < ground_z + floor_band
    roof = z > body_z + roof_clearance
    struct = ~floor & ~roof
    return floor, struct, roof


@dataclass
class HeightGrid:
    """Surfel grid over a height-class surface.

    Cells accumulate point centroids; finalize() fits a plane per cell over
    the 3x3 centroid neighborhood. Planes anchored at true centroids carry
    the surface texture without ring-sampling bias; cells whose neighborhood
    is too one-dimensional for a stable slope keep a vertical normal.
    """

    origin: np.ndarray          # (2,)
    cell: float
    sum_xyz: np.ndarray         # (ny, nx, 3)
    cnt: np.ndarray             # (ny, nx)
    centroid: np.ndarray | None = None
    normal: np.ndarray | None = None

    @classmethod
    def empty(cls, lo: np.ndarray, hi: np.ndarray, cell: float) -> "HeightGrid":
        nx = int(np.ceil((hi[0] - lo[0]) / cell)) + 2
        ny = int(np.ceil((hi[1] - lo[1]) / cell)) + 2
        return cls(origin=lo.copy(), cell=cell,
                   sum_xyz=np.zeros((ny, nx, 3)), cnt=np.zeros((ny, nx)))

    def insert(self, pts: np.ndarray) -> None:
        if len(pts) == 0:
            return
        ix = np.floor((pts[:, 0] - self.origin[0]) / self.cell).astype(int)
        iy = np.floor((pts[:, 1] - self.origin[1]) / self.cell).astype(int)
        ny, nx = self.cnt.shape
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        np.add.at(self.sum_xyz, (iy[ok], ix[ok]), pts[ok])
        np.add.at(self.cnt, (iy[ok], ix[ok]), 1.0)

    def finalize(self) -> None:
        """Fit per-cell surfel planes from 3x3 neighborhood centroids."""
        ny, nx = self.cnt.shape
        occ = self.cnt > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            cen = self.sum_xyz / np.maximum(self.cnt, 1.0)[:, :, None]
        cen[~occ] = 0.0

        # accumulate neighborhood first/second moments via shifts
        w = occ.astype(float)
        S1 = np.zeros((ny, nx, 3))
        Sxx = np.zeros((ny, nx))
        Sxy = np.zeros((ny, nx))
        Syy = np.zeros((ny, nx))
        Sxz = np.zeros((ny, nx))
        Syz = np.zeros((ny, nx))
        W = np.zeros((ny, nx))

        def shifted(a, dy, dx):
            out = np.zeros_like(a)
            src_y = slice(max(0, dy), ny + min(0, dy))
            dst_y = slice(max(0, -dy), ny + min(0, -dy))
            src_x = slice(max(0, dx), nx + min(0, dx))
            dst_x = slice(max(0, -dx), nx + min(0, -dx))
            out[dst_y, dst_x] = a[src_y, src_x]
            return out

        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                wk = shifted(w, dy, dx)
                ck = shifted(cen, dy, dx)
                W += wk
                S1 += ck * wk[:, :, None]
                Sxx += wk * ck[:, :, 0] ** 2
                Syy += wk * ck[:, :, 1] ** 2
                Sxy += wk * ck[:, :, 0] * ck[:, :, 1]
                Sxz += wk * ck[:, :, 0] * ck[:, :, 2]
                Syz += wk * ck[:, :, 1] * ck[:, :, 2]

        Wc = np.maximum(W, 1.0)
        mean = S1 / Wc[:, :, None]
        cxx = Sxx / Wc - mean[:, :, 0] ** 2
        cyy = Syy / Wc - mean[:, :, 1] ** 2
        cxy = Sxy / Wc - mean[:, :, 0] * mean[:, :, 1]
        cxz = Sxz / Wc - mean[:, :, 0] * mean[:, :, 2]
        cyz = Syz / Wc - mean[:, :, 1] * mean[:, :, 2]

        # slope = inv([[cxx, cxy], [cxy, cyy]]) @ [cxz, cyz]
        det = cxx * cyy - cxy * cxy
        tr = cxx + cyy
        disc = np.sqrt(np.maximum((cxx - cyy) ** 2 + 4 * cxy**2, 0.0))
        lam_min = (tr - disc) / 2.0
        stable = occ & (W >= 4) & (lam_min > (0.12 * self.cell) ** 2) \
            & (det > 1e-12)
        safe_det = np.where(det > 1e-12, det, 1.0)
        gx = np.where(stable, (cyy * cxz - cxy * cyz) / safe_det, 0.0)
        gy = np.where(stable, (cxx * cyz - cxy * cxz) / safe_det, 0.0)

        normal = np.stack([-gx, -gy, np.ones_like(gx)], axis=-1)
        normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
        self.centroid = cen
        self.normal = normal

    def lookup_rows(self, pts: np.ndarray, gate: float = 0.5):
        """Point-to-surfel rows: residual to the plane of the point's cell."""
        if self.centroid is None:
            self.finalize()
        ix = np.floor((pts[:, 0] - self.origin[0]) / self.cell).astype(int)
        iy = np.floor((pts[:, 1] - self.origin[1]) / self.cell).astype(int)
        ny, nx = self.cnt.shape
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        ixc = np.clip(ix, 0, nx - 1)
        iyc = np.clip(iy, 0, ny - 1)
        ok &= self.cnt[iyc, ixc] > 0
        p = pts[ok]
        n = self.normal[iyc[ok], ixc[ok]]
        c = self.centroid[iyc[ok], ixc[ok]]
        r = np.einsum("ni,ni->n", n, p - c)
        keep = np.abs(r) <= gate
        return p[keep], n[keep], r[keep]


@dataclass
class SurfaceMap:
    floor: HeightGrid
    roof: HeightGrid | None
    struct_points: np.ndarray
    struct_tree: cKDTree | None

    @classmethod
    def build(cls, floor_pts: np.ndarray, struct_pts: np.ndarray,
              roof_pts: np.ndarray, cell: float = 0.25,
              margin: float = 30.0) -> "SurfaceMap":
        anchor = floor_pts if len(floor_pts) else struct_pts
        if len(anchor) == 0:
            anchor = np.zeros((1, 3))
        lo = anchor[:, :2].min(axis=0) - margin / 4
        hi = anchor[:, :2].max(axis=0) + margin / 4
        floor = HeightGrid.empty(lo, hi, cell)
        floor.insert(floor_pts)
        floor.finalize()
        roof = None
        if len(roof_pts) >= 50:
            roof = HeightGrid.empty(lo, hi, cell)
            roof.insert(roof_pts)
            roof.finalize()
        tree = cKDTree(struct_pts) if len(struct_pts) >= 8 else None
        return cls(floor=floor, roof=roof, struct_points=struct_pts,
                   struct_tree=tree)

    def seed_points(self, center: np.ndarray, radius: float) -> np.ndarray:
        """Observed floor centroids near a position (terrain-map seeding)."""
        g = self.floor
        if g.centroid is None:
            g.finalize()
        iy, ix = np.nonzero(g.cnt > 0)
        if len(ix) == 0:
            return np.zeros((0, 3))
        c = g.centroid[iy, ix]
        near = (c[:, 0] - center[0]) ** 2 + (c[:, 1] - center[1]) ** 2 <= radius**2
        return c[near]


def _structure_rows(src: np.ndarray, surface: SurfaceMap, gate: float, k: int = 6):
    """Point-to-plane rows against structure with per-match plane fits."""
    tree = surface.struct_tree
    if tree is None or len(src) == 0:
        return (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    kk = min(k, len(surface.struct_points))
    if kk < 4:
        return (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    dist, idx = tree.query(src, k=kk, distance_upper_bound=gate)
    valid = np.isfinite(dist).all(axis=1)
    if not valid.any():
        return (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    nb = surface.struct_points[idx[valid]]
    p = src[valid]
    ctr = nb.mean(axis=1)
    cen = nb - ctr[:, None, :]
    cov = np.einsum("nki,nkj->nij", cen, cen)
    vals, vecs = np.linalg.eigh(cov)
    nrm = vecs[:, :, 0]
    planar = vals[:, 1] > 5.0 * np.maximum(vals[:, 0], 1e-12)
    flat = np.abs(np.einsum("nki,ni->nk", cen, nrm)).max(axis=1) < 0.08
    ok = planar & flat
    r = np.einsum("ni,ni->n", nrm[ok], p[ok] - ctr[ok])
    return p[ok], nrm[ok], r


def _grid_rows(src: np.ndarray, grid: HeightGrid | None, gate: float = 0.5):
    """Point-to-surfel rows against a height-class grid."""
    if grid is None or len(src) == 0:
        return (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    return grid.lookup_rows(src, gate)


def register_scan(
    floor_src: np.ndarray,
    struct_src: np.ndarray,
    roof_src: np.ndarray,
    surface: SurfaceMap,
    init: np.ndarray,
    prior_information: np.ndarray | None = None,
    max_correspondence: float = 0.8,
    max_iterations: int = 12,
    tolerance: float = 1e-5,
    min_correspondences: int = 50,
) -> IcpResult:
    """Joint least-squares alignment of a classified scan to the surface map."""
    T = init.copy()
    T_prior = init.copy()
    steps: list[tuple[float, float]] = []
    converged = False
    it = 0
    fitness = float("inf")
    n_rows = 0

    for it in range(1, max_iterations + 1):
        fp = transform_points(T, floor_src)
        sp = transform_points(T, struct_src)
        rp = transform_points(T, roof_src)
        p1, n1, r1 = _grid_rows(fp, surface.floor)
        p2, n2, r2 = _structure_rows(sp, surface, max_correspondence)
        p3, n3, r3 = _grid_rows(rp, surface.roof)
        p = np.vstack([p1, p2, p3])
        nrm = np.vstack([n1, n2, n3])
        r = np.concatenate([r1, r2, r3])
        if len(r) >= 20:
            # robust trim: heavy-tailed rows come from wrong-cell matches
            cut = 4.0 * np.median(np.abs(r)) + 0.02
            keep = np.abs(r) <= cut
            p, nrm, r = p[keep], nrm[keep], r[keep]
        n_rows = len(r)
        if n_rows < min_correspondences:
            raise DegenerateRegistrationError(
                f"{n_rows} correspondences (< {min_correspondences})")

        J = np.hstack([nrm, np.cross(p, nrm)])
        H = J.T @ J + 1e-9 * np.eye(6)
        g = J.T @ r
        if prior_information is not None:
            xi0 = se3_log(T @ transform_inverse(T_prior))
            H = H + prior_information
            g = g + prior_information @ xi0

        delta = np.linalg.solve(H, -g)
        obj_pre = float(np.mean(r * r))
        T_new = se3_exp(delta) @ T
        T = T_new
        fitness = float(np.sqrt(obj_pre))
        steps.append((obj_pre, obj_pre))
        if np.linalg.norm(delta) < tolerance:
            converged = True
            break

    return IcpResult(transform=T, fitness=fitness, iterations=it,
                     correspondences=n_rows, converged=converged,
                     objective_steps=steps)
