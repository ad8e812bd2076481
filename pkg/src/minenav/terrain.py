"""Robot-centered terrain analysis grid.

A 15 m x 15 m grid scrolls with the robot. Each column keeps a bounded ring
buffer of height samples; ground is the 10th-percentile height and a column
is non-traversable when any sample deviates more than 0.2 m from ground
(applied symmetrically, so both rocks and holes block). Unknown columns are
treated as blocked by consumers; returns near roof height are excluded so
mine ceilings do not blind the planner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TerrainConfig

UNKNOWN, TRAVERSABLE, NON_TRAVERSABLE = 0, 1, 2

_STATE_NAMES = {UNKNOWN: "unknown", TRAVERSABLE: "traversable",
                NON_TRAVERSABLE: "non_traversable"}


class OutOfExtentError(ValueError):
    """Query pose falls outside the terrain map extent."""


@dataclass
class TerrainCell:
    ground_height: float
    max_obstacle_height: float
    observation_count: int
    state: str


@dataclass
class FootprintQuery:
    valid: bool
    unknown_fraction: float
    blocked_cells: int


@dataclass
class TerrainMap:
    center: np.ndarray               # (2,) quantized to the cell grid
    resolution: float
    extent: float
    stamp: float
    n: int = field(init=False)
    ground: np.ndarray = field(init=False)
    obstacle: np.ndarray = field(init=False)
    counts: np.ndarray = field(init=False)
    states: np.ndarray = field(init=False)
    _buf: np.ndarray = field(init=False, repr=False)
    _buf_len: np.ndarray = field(init=False, repr=False)
    _buf_pos: np.ndarray = field(init=False, repr=False)
    buffer_depth: int = 64

    def __post_init__(self):
        self.n = int(round(self.extent / self.resolution))
        shape = (self.n, self.n)
        self.ground = np.zeros(shape)
        self.obstacle = np.zeros(shape)
        self.counts = np.zeros(shape, dtype=np.int64)
        self.states = np.full(shape, UNKNOWN, dtype=np.int8)
        self._buf = np.full(shape + (self.buffer_depth,), np.inf, dtype=np.float32)
        self._buf_len = np.zeros(shape, dtype=np.int32)
        self._buf_pos = np.zeros(shape, dtype=np.int32)

    @classmethod
    def empty(cls, center: np.ndarray, cfg: TerrainConfig,
              stamp: float = 0.0) -> "TerrainMap":
        c = np.round(np.asarray(center[:2]) / cfg.resolution) * cfg.resolution
        return cls(center=c, resolution=cfg.resolution, extent=cfg.extent,
                   stamp=stamp, buffer_depth=cfg.column_buffer)

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.extent / 2.0

    def cell_index(self, x, y):
        ix = np.floor((np.asarray(x) - self.lower[0]) / self.resolution).astype(int)
        iy = np.floor((np.asarray(y) - self.lower[1]) / self.resolution).astype(int)
        return ix, iy

    def in_extent(self, x: float, y: float) -> bool:
        lx, ly = self.lower
        return lx <= x < lx + self.extent and ly <= y < ly + self.extent

    def cell(self, x: float, y: float) -> TerrainCell:
        if not self.in_extent(x, y):
            raise OutOfExtentError(f"({x:.2f}, {y:.2f}) outside terrain map")
        ix, iy = self.cell_index(x, y)
        return TerrainCell(
            ground_height=float(self.ground[iy, ix]),
            max_obstacle_height=float(self.obstacle[iy, ix]),
            observation_count=int(self.counts[iy, ix]),
            state=_STATE_NAMES[int(self.states[iy, ix])],
        )


def _scroll(m: TerrainMap, shift_x: int, shift_y: int) -> None:
    """Shift grids so data stays anchored to world coordinates."""
    if shift_x == 0 and shift_y == 0:
        return
    n = m.n

    def move(arr, fill):
        out = np.full_like(arr, fill)
        sx, sy = shift_x, shift_y
        src_x = slice(max(0, sx), n + min(0, sx))
        dst_x = slice(max(0, -sx), n + min(0, -sx))
        src_y = slice(max(0, sy), n + min(0, sy))
        dst_y = slice(max(0, -sy), n + min(0, -sy))
        if src_x.start < src_x.stop and src_y.start < src_y.stop:
            out[dst_y, dst_x] = arr[src_y, src_x]
        return out

    m.ground = move(m.ground, 0.0)
    m.obstacle = move(m.obstacle, 0.0)
    m.counts = move(m.counts, 0)
    m.states = move(m.states, UNKNOWN)
    m._buf = move(m._buf, np.inf)
    m._buf_len = move(m._buf_len, 0)
    m._buf_pos = move(m._buf_pos, 0)


def _insert_points(m: TerrainMap, pts: np.ndarray,
                   only_empty: bool = False) -> np.ndarray:
    """Ring-buffer insert; returns flat indices of touched cells."""
    if len(pts) == 0:
        return np.zeros(0, dtype=int)
    ix, iy = m.cell_index(pts[:, 0], pts[:, 1])
    ok = (ix >= 0) & (ix < m.n) & (iy >= 0) & (iy < m.n)
    if only_empty:
        ok &= m.counts[np.clip(iy, 0, m.n - 1), np.clip(ix, 0, m.n - 1)] == 0
    if not ok.any():
        return np.zeros(0, dtype=int)
    flat = iy[ok] * m.n + ix[ok]
    z = pts[ok, 2].astype(np.float32)

    order = np.argsort(flat, kind="stable")
    flat_s = flat[order]
    z_s = z[order]
    starts = np.concatenate([[0], np.nonzero(np.diff(flat_s))[0] + 1])
    group_sizes = np.diff(np.concatenate([starts, [len(flat_s)]]))
    rank = np.arange(len(flat_s)) - np.repeat(starts, group_sizes)

    B = m.buffer_depth
    buf_flat = m._buf.reshape(-1, B)
    pos = m._buf_pos.reshape(-1)
    lens = m._buf_len.reshape(-1)
    cnts = m.counts.reshape(-1)
    slots = (pos[flat_s] + rank) % B
    buf_flat[flat_s, slots] = z_s

    cells = flat_s[starts]
    pos[cells] = (pos[cells] + group_sizes) % B
    lens[cells] = np.minimum(lens[cells] + group_sizes, B)
    cnts[cells] += group_sizes
    return cells


def _refresh_cells(m: TerrainMap, cells: np.ndarray, threshold: float) -> None:
    if len(cells) == 0:
        return
    B = m.buffer_depth
    buf = m._buf.reshape(-1, B)[cells]
    lens = m._buf_len.reshape(-1)[cells]
    srt = np.sort(buf, axis=1)                       # inf padding sorts last
    gidx = ((lens - 1).astype(float) * 0.1).astype(int)
    ground = np.take_along_axis(srt, gidx[:, None], axis=1)[:, 0]
    zmax = np.take_along_axis(srt, (lens - 1)[:, None], axis=1)[:, 0]
    zmin = srt[:, 0]
    obstacle = np.maximum(zmax - ground, ground - zmin)
    m.ground.reshape(-1)[cells] = ground
    m.obstacle.reshape(-1)[cells] = obstacle
    states = np.where(obstacle > threshold, NON_TRAVERSABLE, TRAVERSABLE)
    m.states.reshape(-1)[cells] = states


def update_terrain(
    prev: TerrainMap,
    scan_world: np.ndarray,
    map_points: np.ndarray | None,
    robot_pose: np.ndarray,
    cfg: TerrainConfig,
    stamp: float | None = None,
) -> TerrainMap:
    """Recenter on the robot and merge the latest scan (plus map seed points).

    ``scan_world``: deskewed points already in the world frame. ``map_points``
    seed only never-observed cells. Returns the same map object, mutated
    (single-writer task owns it; consumers use snapshots).
    """
    m = prev
    robot_xy = robot_pose[:3, 3][:2]
    robot_z = float(robot_pose[2, 3])
    new_center = np.round(robot_xy / m.resolution) * m.resolution
    shift = np.round((new_center - m.center) / m.resolution).astype(int)
    _scroll(m, int(shift[0]), int(shift[1]))
    m.center = new_center
    if stamp is not None:
        m.stamp = stamp

    touched = []
    if map_points is not None and len(map_points):
        keep = map_points[:, 2] <= robot_z + cfg.roof_clearance
        touched.append(_insert_points(m, map_points[keep], only_empty=True))
    if len(scan_world):
        keep = scan_world[:, 2] <= robot_z + cfg.roof_clearance
        touched.append(_insert_points(m, scan_world[keep]))
    if touched:
        cells = np.unique(np.concatenate(touched))
        _refresh_cells(m, cells, cfg.obstacle_height_max)
    return m


def seed_disc(m: TerrainMap, center_xy: np.ndarray, radius: float,
              ground_z: float, cfg: TerrainConfig) -> None:
    """Mark a clear disc (deployment area / under-footprint) as flat ground."""
    lx, ly = m.lower
    xs = lx + (np.arange(m.n) + 0.5) * m.resolution
    ys = ly + (np.arange(m.n) + 0.5) * m.resolution
    gx, gy = np.meshgrid(xs, ys)
    mask = (gx - center_xy[0]) ** 2 + (gy - center_xy[1]) ** 2 <= radius**2
    mask &= m.counts == 0
    if not mask.any():
        return
    iy, ix = np.nonzero(mask)
    pts = np.column_stack([gx[mask], gy[mask], np.full(mask.sum(), ground_z)])
    cells = _insert_points(m, pts)
    _refresh_cells(m, cells, cfg.obstacle_height_max)


def footprint_cells(m: TerrainMap, pose_xy_heading: tuple[float, float, float],
                    length: float, width: float) -> tuple[np.ndarray, np.ndarray]:
    """Cell indices whose centers fall under the (slightly inflated) footprint."""
    x, y, heading = pose_xy_heading
    inflate = m.resolution * np.sqrt(2.0) / 2.0
    half_l = length / 2.0 + inflate
    half_w = width / 2.0 + inflate
    reach = float(np.hypot(half_l, half_w))
    ix0, iy0 = m.cell_index(x - reach, y - reach)
    ix1, iy1 = m.cell_index(x + reach, y + reach)
    ix0, iy0 = max(ix0, 0), max(iy0, 0)
    ix1, iy1 = min(ix1, m.n - 1), min(iy1, m.n - 1)
    if ix0 > ix1 or iy0 > iy1:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    xs = m.lower[0] + (np.arange(ix0, ix1 + 1) + 0.5) * m.resolution
    ys = m.lower[1] + (np.arange(iy0, iy1 + 1) + 0.5) * m.resolution
    gx, gy = np.meshgrid(xs, ys)
    c, s = np.cos(heading), np.sin(heading)
    bx = c * (gx - x) + s * (gy - y)
    by = -s * (gx - x) + c * (gy - y)
    mask = (np.abs(bx) <= half_l) & (np.abs(by) <= half_w)
    iy, ix = np.nonzero(mask)
    return ix + ix0, iy + iy0


def query_footprint(m: TerrainMap, pose_xy_heading: tuple[float, float, float],
                    length: float = 1.52, width: float = 1.15) -> FootprintQuery:
    """Footprint validity at a planar pose; unknown cells count as blocked."""
    x, y, _ = pose_xy_heading
    if not m.in_extent(x, y):
        raise OutOfExtentError(f"({x:.2f}, {y:.2f}) outside terrain map")
    ix, iy = footprint_cells(m, pose_xy_heading, length, width)
    if len(ix) == 0:
        return FootprintQuery(valid=False, unknown_fraction=1.0, blocked_cells=0)
    st = m.states[iy, ix]
    unknown = int((st == UNKNOWN).sum())
    blocked = int((st == NON_TRAVERSABLE).sum())
    valid = unknown == 0 and blocked == 0
    return FootprintQuery(valid=valid,
                          unknown_fraction=unknown / len(ix),
                          blocked_cells=blocked)


def to_snapshot(m: TerrainMap) -> dict:
    """Compact wire form: run-length-encoded states, row-major."""
    flat = m.states.reshape(-1)
    edges = np.concatenate([[0], np.nonzero(np.diff(flat))[0] + 1, [len(flat)]])
    runs = [[int(flat[edges[i]]), int(edges[i + 1] - edges[i])]
            for i in range(len(edges) - 1)]
    return {
        "center": m.center.tolist(),
        "resolution": m.resolution,
        "extent": m.extent,
        "stamp": m.stamp,
        "rle_states": runs,
    }


def from_snapshot(data: dict) -> np.ndarray:
    """Decode the RLE state grid from a snapshot message."""
    runs = data["rle_states"]
    flat = np.concatenate([np.full(n, v, dtype=np.int8) for v, n in runs])
    n = int(round(data["extent"] / data["resolution"]))
    return flat.reshape(n, n)
