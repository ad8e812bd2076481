"""Motion-primitive local planner.

A Monte-Carlo library of constant-curvature arcs is precomputed together
with an inverted index from body-frame grid cells to the primitives (and
stations) they would sweep, so collision pruning is a gather over blocked
cells. Paths are cropped at the first blocked/unobserved station; surviving
primitives vote into direction bins weighted by a Gaussian of goal-bearing
error and the best primitive of the winning bin is returned in world frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .config import PlannerConfig
from .geometry import wrap_angle
from .terrain import NON_TRAVERSABLE, TRAVERSABLE, UNKNOWN, TerrainMap


class NoValidPath(RuntimeError):
    """No primitive survives collision pruning; caller should recover."""


@dataclass
class MotionPrimitive:
    id: int
    curvature: float
    path: np.ndarray                 # (K, 3) x, y, heading at arc-length steps
    endpoint_bearing: float
    direction_bin: int


@dataclass
class PlannedPath:
    poses: np.ndarray                # (K, 3) world frame x, y, heading
    score: float
    stamp: float
    goal_id: int
    primitive_id: int
    station_step: float

    @property
    def length(self) -> float:
        return (len(self.poses) - 1) * self.station_step


@dataclass
class PrimitiveLibrary:
    primitives: list[MotionPrimitive]
    config: PlannerConfig
    footprint: tuple[float, float]
    resolution: float
    half_window: int
    cell_start: np.ndarray           # CSR over window cells
    entry_prims: np.ndarray
    entry_stations: np.ndarray
    n_stations: int
    bin_totals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def window_key(self, di: np.ndarray, dj: np.ndarray) -> np.ndarray:
        w = 2 * self.half_window + 1
        return (di + self.half_window) * w + (dj + self.half_window)


def _arc_path(curvature: float, horizon: float, step: float) -> np.ndarray:
    s = np.arange(0.0, horizon + step / 2, step)
    k = curvature
    if abs(k) < 1e-12:
        x, y, th = s, np.zeros_like(s), np.zeros_like(s)
    else:
        th = k * s
        x = np.sin(th) / k
        y = (1.0 - np.cos(th)) / k
    return np.column_stack([x, y, th])


def _rasterize_footprint(px: float, py: float, heading: float,
                         half_l: float, half_w: float, res: float) -> np.ndarray:
    """Integer grid offsets covered by the footprint rectangle at one station."""
    reach = np.hypot(half_l, half_w)
    i0 = int(np.floor((px - reach) / res))
    i1 = int(np.ceil((px + reach) / res))
    j0 = int(np.floor((py - reach) / res))
    j1 = int(np.ceil((py + reach) / res))
    ii = np.arange(i0, i1 + 1)
    jj = np.arange(j0, j1 + 1)
    gx, gy = np.meshgrid(ii * res, jj * res)
    c, s = np.cos(heading), np.sin(heading)
    bx = c * (gx - px) + s * (gy - py)
    by = -s * (gx - px) + c * (gy - py)
    mask = (np.abs(bx) <= half_l) & (np.abs(by) <= half_w)
    jy, ix = np.nonzero(mask)
    return np.column_stack([ii[ix], jj[jy]])


def build_library(cfg: PlannerConfig, footprint: tuple[float, float] = (1.52, 1.15),
                  resolution: float = 0.15, seed: int | None = None) -> PrimitiveLibrary:
    """Monte-Carlo primitive set + inverted collision index (deterministic per seed)."""
    seed = cfg.library_seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_stations = int(round(cfg.horizon / cfg.station_step))

    curvatures = [0.0]
    if cfg.max_curvature > 0 and cfg.num_primitives > 1:
        curvatures.extend(rng.uniform(-cfg.max_curvature, cfg.max_curvature,
                                      cfg.num_primitives - 1).tolist())
    else:
        curvatures.extend([0.0] * (cfg.num_primitives - 1))

    # bins centered on k * width so a dead-ahead goal lands mid-bin, not on an edge
    bin_width = 2 * np.pi / cfg.direction_bins
    prims: list[MotionPrimitive] = []
    for pid, k in enumerate(curvatures):
        path = _arc_path(k, cfg.horizon, cfg.station_step)
        bearing = float(np.arctan2(path[-1, 1], path[-1, 0]))
        dbin = int(np.rint(bearing / bin_width)) % cfg.direction_bins
        prims.append(MotionPrimitive(id=pid, curvature=float(k), path=path,
                                     endpoint_bearing=bearing, direction_bin=dbin))

    # inverted index: window cell -> (primitive, first station covering it)
    inflate = resolution * np.sqrt(2.0)
    half_l = footprint[0] / 2.0 + inflate
    half_w = footprint[1] / 2.0 + inflate
    half_window = int(np.ceil((cfg.horizon + np.hypot(half_l, half_w)) / resolution)) + 1
    w = 2 * half_window + 1
    first_station: dict[int, dict[int, int]] = {}
    for p in prims:
        seen: dict[int, int] = {}
        for s_idx in range(len(p.path)):
            px, py, th = p.path[s_idx]
            cells = _rasterize_footprint(px, py, th, half_l, half_w, resolution)
            keys = (cells[:, 0] + half_window) * w + (cells[:, 1] + half_window)
            for key in keys:
                if key not in seen:
                    seen[int(key)] = s_idx
        for key, s_idx in seen.items():
            first_station.setdefault(key, {})[p.id] = s_idx

    counts = np.zeros(w * w + 1, dtype=np.int64)
    for key, d in first_station.items():
        counts[key + 1] = len(d)
    cell_start = np.cumsum(counts)
    total = int(cell_start[-1])
    entry_prims = np.zeros(total, dtype=np.int32)
    entry_stations = np.zeros(total, dtype=np.int32)
    for key, d in first_station.items():
        k0 = cell_start[key]
        for off, (pid, s_idx) in enumerate(sorted(d.items())):
            entry_prims[k0 + off] = pid
            entry_stations[k0 + off] = s_idx

    bin_totals = np.bincount([p.direction_bin for p in prims],
                             minlength=cfg.direction_bins).astype(float)
    return PrimitiveLibrary(
        primitives=prims, config=cfg, footprint=footprint, resolution=resolution,
        half_window=half_window, cell_start=cell_start,
        entry_prims=entry_prims, entry_stations=entry_stations,
        n_stations=n_stations, bin_totals=bin_totals,
    )


_library_cache: dict[tuple, PrimitiveLibrary] = {}


def get_library(cfg: PlannerConfig, footprint: tuple[float, float],
                resolution: float) -> PrimitiveLibrary:
    """Library construction is deterministic, so cache across missions."""
    key = tuple(getattr(cfg, f) for f in PlannerConfig.__dataclass_fields__) \
        + (footprint[0], footprint[1], resolution)
    if key not in _library_cache:
        if len(_library_cache) > 4:
            _library_cache.clear()
        _library_cache[key] = build_library(cfg, footprint, resolution)
    return _library_cache[key]


def _gather_entries(lib: PrimitiveLibrary, terrain: TerrainMap, mask: np.ndarray,
                    x: float, y: float, heading: float):
    """Index entries (primitive, station) touched by masked terrain cells."""
    jj, ii = np.nonzero(mask)
    empty = np.zeros(0, dtype=np.int64)
    if len(ii) == 0:
        return empty, empty
    cx = terrain.lower[0] + (ii + 0.5) * terrain.resolution
    cy = terrain.lower[1] + (jj + 0.5) * terrain.resolution
    reach = lib.config.horizon + 1.6
    near = (cx - x) ** 2 + (cy - y) ** 2 <= reach * reach
    if not near.any():
        return empty, empty
    cx, cy = cx[near], cy[near]
    c, s = np.cos(heading), np.sin(heading)
    bx = c * (cx - x) + s * (cy - y)
    by = -s * (cx - x) + c * (cy - y)
    di = np.rint(bx / lib.resolution).astype(np.int64)
    dj = np.rint(by / lib.resolution).astype(np.int64)
    hw = lib.half_window
    ok = (np.abs(di) <= hw) & (np.abs(dj) <= hw)
    if not ok.any():
        return empty, empty
    keys = lib.window_key(di[ok], dj[ok])
    starts = lib.cell_start[keys]
    lengths = lib.cell_start[keys + 1] - starts
    nz = lengths > 0
    if not nz.any():
        return empty, empty
    starts, lengths = starts[nz], lengths[nz]
    gather = np.repeat(starts, lengths) \
        + (np.arange(lengths.sum()) - np.repeat(np.cumsum(lengths) - lengths, lengths))
    return lib.entry_prims[gather], lib.entry_stations[gather]


def prune_primitives(lib: PrimitiveLibrary, terrain: TerrainMap,
                     robot_pose: np.ndarray,
                     kill_station_bound: int | None = None
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Collision pruning via the inverted index.

    Non-traversable cells invalidate a primitive outright (within the kill
    bound, normally the goal distance); unknown cells only crop it at the
    observation frontier. Returns (first blocked station, killed mask).
    """
    x, y = robot_pose[0, 3], robot_pose[1, 3]
    heading = float(np.arctan2(robot_pose[1, 0], robot_pose[0, 0]))
    n_prims = len(lib.primitives)
    crop = np.full(n_prims, lib.n_stations + 1, dtype=np.int64)
    killed = np.zeros(n_prims, dtype=bool)
    bound = lib.n_stations if kill_station_bound is None else kill_station_bound

    prims_u, stations_u = _gather_entries(
        lib, terrain, terrain.states == UNKNOWN, x, y, heading)
    if len(prims_u):
        np.minimum.at(crop, prims_u, stations_u)

    prims_b, stations_b = _gather_entries(
        lib, terrain, terrain.states == NON_TRAVERSABLE, x, y, heading)
    if len(prims_b):
        np.minimum.at(crop, prims_b, stations_b)
        killed[prims_b[stations_b <= bound]] = True
    return crop, killed


def plan(lib: PrimitiveLibrary, terrain: TerrainMap, robot_pose: np.ndarray,
         goal: np.ndarray, stamp: float = 0.0, goal_id: int = 0) -> PlannedPath:
    """Select the best surviving primitive toward a world-frame waypoint.

    Raises NoValidPath when nothing survives pruning (rotate-in-place
    recovery is owned by the controller).
    """
    cfg = lib.config
    x, y = robot_pose[0, 3], robot_pose[1, 3]
    heading = float(np.arctan2(robot_pose[1, 0], robot_pose[0, 0]))

    goal_dist = float(np.hypot(goal[0] - x, goal[1] - y))
    bound = min(lib.n_stations,
                int(np.ceil((goal_dist + cfg.goal_tolerance) / cfg.station_step)))
    crop, killed = prune_primitives(lib, terrain, robot_pose, bound)
    min_stations = int(round(cfg.min_path_length / cfg.station_step))
    alive = ~killed & (crop > min_stations)
    survivors = np.nonzero(alive)[0]
    if len(survivors) == 0:
        raise NoValidPath("all primitives blocked within the horizon")

    goal_bearing = wrap_angle(float(np.arctan2(goal[1] - y, goal[0] - x)) - heading)
    sigma = np.deg2rad(cfg.bearing_sigma_deg)
    bin_width = 2 * np.pi / cfg.direction_bins
    bin_centers = wrap_angle(np.arange(cfg.direction_bins) * bin_width)
    weights = np.exp(-0.5 * (wrap_angle(bin_centers - goal_bearing) / sigma) ** 2)

    bins = np.array([lib.primitives[p].direction_bin for p in survivors])
    frac = np.minimum(crop[survivors], lib.n_stations) / lib.n_stations
    counts = np.bincount(bins, weights=frac * frac, minlength=cfg.direction_bins)
    # clear path-length fraction per direction (squared: prefer uncropped paths),
    # weighted by bearing alignment
    scores = counts / np.maximum(lib.bin_totals, 1.0) * weights
    best_bin = int(np.argmax(scores))
    if scores[best_bin] <= 0.0:
        # numerically zero weights far from goal: fall back to nearest-bearing bin
        occupied = np.nonzero(counts)[0]
        best_bin = int(occupied[np.argmin(
            np.abs(wrap_angle(bin_centers[occupied] - goal_bearing)))])

    in_bin = [int(p) for p in survivors
              if lib.primitives[p].direction_bin == best_bin]

    def rank(pid: int):
        prim = lib.primitives[pid]
        end = prim.path[min(int(crop[pid]) - 1, len(prim.path) - 1)]
        bearing = np.arctan2(end[1], end[0]) if np.hypot(end[0], end[1]) > 1e-9 else 0.0
        return (abs(wrap_angle(bearing - goal_bearing)), abs(prim.curvature), pid)

    chosen = min(in_bin, key=rank)
    prim = lib.primitives[chosen]
    n_keep = min(int(crop[chosen]), len(prim.path))
    path = prim.path[:n_keep].copy()

    # crop at the goal when it falls inside the horizon
    c, s = np.cos(heading), np.sin(heading)
    gx_b = c * (goal[0] - x) + s * (goal[1] - y)
    gy_b = -s * (goal[0] - x) + c * (goal[1] - y)
    d2 = (path[:, 0] - gx_b) ** 2 + (path[:, 1] - gy_b) ** 2
    k_goal = int(np.argmin(d2))
    if np.sqrt(d2[k_goal]) < 2.0 * cfg.goal_tolerance and k_goal >= 1:
        path = path[:k_goal + 1]

    world = np.empty_like(path)
    world[:, 0] = x + c * path[:, 0] - s * path[:, 1]
    world[:, 1] = y + s * path[:, 0] + c * path[:, 1]
    world[:, 2] = wrap_angle(path[:, 2] + heading)
    return PlannedPath(poses=world, score=float(scores[best_bin]), stamp=stamp,
                       goal_id=goal_id, primitive_id=chosen,
                       station_step=cfg.station_step)


def goal_reached(robot_pose: np.ndarray, goal: np.ndarray,
                 tolerance: float = 0.3) -> bool:
    """Planar arrival test."""
    dx = robot_pose[0, 3] - goal[0]
    dy = robot_pose[1, 3] - goal[1]
    return bool(np.hypot(dx, dy) <= tolerance)
