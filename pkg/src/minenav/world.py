"""Synthetic room-and-pillar mine worlds.

A world is a heightfield floor, axis-aligned pillar prisms, polygonal hazard
patches (depressed, water-like basins) and an optional flat roof. Geometry is
fully determined by the generation seed; regenerating with identical
parameters yields a bit-identical world.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

WORLD_SCHEMA_VERSION = 1
GRAVITY = 9.81

# robot footprint diagonal; corridors must exceed this to be navigable
FOOTPRINT_DIAGONAL = float(np.hypot(1.52, 1.15))


class WorldParameterError(ValueError):
    """Invalid world generation geometry."""


@dataclass
class Prism:
    """Axis-aligned rectangular prism (pillar or scattered obstacle)."""

    center: np.ndarray          # (2,) x, y
    width: float                # x extent
    depth: float                # y extent
    height: float               # above local floor
    z0: float                   # base elevation

    @property
    def z1(self) -> float:
        return self.z0 + self.height

    def aabb(self) -> np.ndarray:
        cx, cy = self.center
        return np.array(
            [cx - self.width / 2, cx + self.width / 2,
             cy - self.depth / 2, cy + self.depth / 2]
        )


@dataclass
class Hazard:
    """Convex polygonal non-traversable patch, stamped as a floor depression."""

    polygon: np.ndarray         # (K, 2) CCW vertices
    depth: float = 0.28


@dataclass
class WorldModel:
    seed: int
    cell_size: float
    origin: np.ndarray          # (2,) lower-left of the heightfield
    heights: np.ndarray         # (ny, nx) floor elevation grid
    pillars: list[Prism]
    hazards: list[Hazard]
    bounds: np.ndarray          # (4,) xmin, ymin, xmax, ymax
    base_station: np.ndarray    # (3,)
    roof_height: float | None = None
    _slabs: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.cell_size <= 0:
            raise WorldParameterError("heightfield cell size must be > 0")
        if not np.all(np.isfinite(self.heights)):
            raise WorldParameterError("heightfield contains non-finite values")
        xmin, ymin, xmax, ymax = self.bounds
        for p in self.pillars:
            x0, x1, y0, y1 = p.aabb()
            if x0 < xmin - 1e-9 or x1 > xmax + 1e-9 or y0 < ymin - 1e-9 or y1 > ymax + 1e-9:
                raise WorldParameterError("pillar footprint outside world bounds")
        _check_no_overlap(self.pillars)

    @property
    def slabs(self) -> np.ndarray:
        """Prisms as an (P, 6) array: xmin, xmax, ymin, ymax, z0, z1."""
        if self._slabs is None or len(self._slabs) != len(self.pillars):
            if self.pillars:
                rows = []
                for p in self.pillars:
                    x0, x1, y0, y1 = p.aabb()
                    rows.append([x0, x1, y0, y1, p.z0, p.z1])
                self._slabs = np.array(rows)
            else:
                self._slabs = np.zeros((0, 6))
        return self._slabs

    @property
    def max_slope(self) -> float:
        gy, gx = np.gradient(self.heights, self.cell_size)
        return float(max(np.abs(gx).max(), np.abs(gy).max(), 1e-6))

    def floor_height(self, x, y):
        """Bilinear floor elevation at (x, y); edge-clamped outside the grid."""
        return _bilinear(self.heights, self.origin, self.cell_size, x, y)

    def contains(self, x: float, y: float) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def in_hazard(self, x: float, y: float) -> bool:
        return any(_point_in_polygon(h.polygon, x, y) for h in self.hazards)


def _check_no_overlap(pillars: list[Prism]) -> None:
    boxes = [p.aabb() for p in pillars]
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            a, b = boxes[i], boxes[j]
            if a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]:
                raise WorldParameterError(f"pillars {i} and {j} overlap")


@njit(cache=True, inline="always")
def bilinear_nb(grid, ox, oy, cell, x, y):
    """Scalar bilinear heightfield sample, edge-clamped (numba, hot path)."""
    ny, nx = grid.shape
    fx = (x - ox) / cell
    fy = (y - oy) / cell
    if fx < 0.0:
        fx = 0.0
    elif fx > nx - 1.000001:
        fx = nx - 1.000001
    if fy < 0.0:
        fy = 0.0
    elif fy > ny - 1.000001:
        fy = ny - 1.000001
    ix = int(fx)
    iy = int(fy)
    ax = fx - ix
    ay = fy - iy
    return (grid[iy, ix] * (1 - ax) * (1 - ay)
            + grid[iy, ix + 1] * ax * (1 - ay)
            + grid[iy + 1, ix] * (1 - ax) * ay
            + grid[iy + 1, ix + 1] * ax * ay)


def _bilinear(grid: np.ndarray, origin: np.ndarray, cell: float, x, y):
    ny, nx = grid.shape
    fx = (np.asarray(x) - origin[0]) / cell
    fy = (np.asarray(y) - origin[1]) / cell
    fx = np.clip(fx, 0.0, nx - 1.000001)
    fy = np.clip(fy, 0.0, ny - 1.000001)
    ix = fx.astype(int)
    iy = fy.astype(int)
    ax = fx - ix
    ay = fy - iy
    h00 = grid[iy, ix]
    h10 = grid[iy, ix + 1]
    h01 = grid[iy + 1, ix]
    h11 = grid[iy + 1, ix + 1]
    return (h00 * (1 - ax) * (1 - ay) + h10 * ax * (1 - ay)
            + h01 * (1 - ax) * ay + h11 * ax * ay)


def _point_in_polygon(poly: np.ndarray, x: float, y: float) -> bool:
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xt = x1 + (y - y1) / (y2 - y1) * (x2 - x1)
            if x < xt:
                inside = not inside
    return inside


def _value_noise(rng: np.random.Generator, origin, extent, cell, amplitude):
    """Bounded two-octave value noise: meter-scale undulation plus gravel-scale
    texture (the fine octave is what gives scan matching horizontal grip)."""
    nx = int(np.ceil(extent[0] / cell)) + 1
    ny = int(np.ceil(extent[1] / cell)) + 1
    out = np.zeros((ny, nx))
    if amplitude <= 0:
        return out
    xs = np.arange(nx) * cell
    ys = np.arange(ny) * cell
    gx, gy = np.meshgrid(xs, ys)
    for lattice, amp in ((2.0, 0.5 * amplitude), (0.9, 0.5 * amplitude)):
        cnx = int(np.ceil(extent[0] / lattice)) + 2
        cny = int(np.ceil(extent[1] / lattice)) + 2
        coarse = rng.uniform(-amp, amp, size=(cny, cnx))
        out += _bilinear(coarse, np.zeros(2), 1.0, gx / lattice, gy / lattice)
    return out


def generate_world(
    rows: int,
    cols: int,
    pitch: float = 12.0,
    pillar_size: float = 6.0,
    corridor_width: float | None = None,
    roughness: float = 0.05,
    hazard_density: float = 0.0,
    seed: int = 0,
    extent: tuple[float, float] | None = None,
    roof_height: float | None = None,
    pillar_height: float = 4.0,
    cell_size: float = 0.2,
    base_station: tuple[float, float, float] | None = None,
) -> WorldModel:
    """Generate a deterministic room-and-pillar world.

    ``rows`` x ``cols`` pillars on a square grid at ``pitch`` spacing. With
    zero pillars an open field of the given ``extent`` is produced. Hazards
    are placed hugging pillar walls so the corridor graph stays connected.
    """
    if rows > 0 and cols > 0:
        if pitch <= pillar_size:
            raise WorldParameterError("pillar pitch must exceed pillar size")
        derived = pitch - pillar_size
        if corridor_width is None:
            corridor_width = derived
        elif abs(corridor_width - derived) > 1e-9:
            raise WorldParameterError(
                f"corridor width {corridor_width} inconsistent with pitch - pillar = {derived}"
            )
        if corridor_width <= FOOTPRINT_DIAGONAL:
            raise WorldParameterError(
                f"corridor width {corridor_width} must exceed the footprint diagonal "
                f"{FOOTPRINT_DIAGONAL:.2f}"
            )
        span_x = (cols - 1) * pitch + pillar_size + 2 * corridor_width
        span_y = (rows - 1) * pitch + pillar_size + 2 * corridor_width
        lo_x = -corridor_width - pillar_size / 2
        lo_y = -corridor_width - pillar_size / 2
    else:
        if extent is None:
            extent = (60.0, 60.0)
        span_x, span_y = extent
        lo_x, lo_y = -span_x / 2, -span_y / 2

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    origin = np.array([lo_x, lo_y])
    heights = _value_noise(rng, origin, (span_x, span_y), cell_size, roughness)
    bounds = np.array([lo_x, lo_y, lo_x + span_x, lo_y + span_y])

    pillars: list[Prism] = []
    if rows > 0 and cols > 0:
        top = roof_height if roof_height is not None else pillar_height
        for j in range(rows):
            for i in range(cols):
                cx, cy = i * pitch, j * pitch
                z0 = float(
                    _bilinear(heights, origin, cell_size, np.array(cx), np.array(cy))
                ) - 0.2
                pillars.append(Prism(np.array([cx, cy]), pillar_size, pillar_size,
                                     top - z0, z0))

    world = WorldModel(
        seed=seed,
        cell_size=cell_size,
        origin=origin,
        heights=heights,
        pillars=pillars,
        hazards=[],
        bounds=bounds,
        base_station=np.array(base_station) if base_station is not None
        else np.array([lo_x + 1.5, lo_y + 1.5, 1.5]),
        roof_height=roof_height,
    )

    if hazard_density > 0 and pillars:
        _place_hazards(world, hazard_density, corridor_width, rng)
    return world


def _place_hazards(world: WorldModel, density: float, corridor: float,
                   rng: np.random.Generator) -> None:
    """Stamp water-like depressions along pillar walls, keeping corridors open."""
    count = max(1, int(round(density * len(world.pillars))))
    max_width = corridor - FOOTPRINT_DIAGONAL - 0.8
    if max_width < 0.6:
        return
    attempts = 0
    while len(world.hazards) < count and attempts < count * 20:
        attempts += 1
        pillar = world.pillars[int(rng.integers(len(world.pillars)))]
        side = int(rng.integers(4))
        w = float(rng.uniform(0.6, min(max_width, 2.0)))
        length = float(rng.uniform(1.5, 4.0))
        x0, x1, y0, y1 = pillar.aabb()
        if side == 0:       # +x wall
            cx, cy = x1 + w / 2, rng.uniform(y0, y1)
            hw, hl = w, length
        elif side == 1:     # -x wall
            cx, cy = x0 - w / 2, rng.uniform(y0, y1)
            hw, hl = w, length
        elif side == 2:     # +y wall
            cx, cy = rng.uniform(x0, x1), y1 + w / 2
            hw, hl = length, w
        else:               # -y wall
            cx, cy = rng.uniform(x0, x1), y0 - w / 2
            hw, hl = length, w
        jitter = rng.uniform(-0.15, 0.15, size=(4, 2))
        poly = np.array([
            [cx - hw / 2, cy - hl / 2],
            [cx + hw / 2, cy - hl / 2],
            [cx + hw / 2, cy + hl / 2],
            [cx - hw / 2, cy + hl / 2],
        ]) + jitter
        hazard = Hazard(polygon=poly)
        world.hazards.append(hazard)
        _stamp_depression(world, hazard)
        if not corridor_graph_connected(world):
            world.hazards.pop()
            _unstamp_depression(world, hazard)


def _hazard_node_mask(world: WorldModel, hazard: Hazard) -> np.ndarray:
    ny, nx = world.heights.shape
    xs = world.origin[0] + np.arange(nx) * world.cell_size
    ys = world.origin[1] + np.arange(ny) * world.cell_size
    gx, gy = np.meshgrid(xs, ys)
    mask = np.zeros((ny, nx), dtype=bool)
    x0, y0 = hazard.polygon.min(axis=0)
    x1, y1 = hazard.polygon.max(axis=0)
    box = (gx >= x0) & (gx <= x1) & (gy >= y0) & (gy <= y1)
    for iy, ix in zip(*np.nonzero(box)):
        if _point_in_polygon(hazard.polygon, gx[iy, ix], gy[iy, ix]):
            mask[iy, ix] = True
    return mask


def _stamp_depression(world: WorldModel, hazard: Hazard) -> None:
    world.heights[_hazard_node_mask(world, hazard)] -= hazard.depth


def _unstamp_depression(world: WorldModel, hazard: Hazard) -> None:
    world.heights[_hazard_node_mask(world, hazard)] += hazard.depth


def scatter_obstacles(
    world: WorldModel,
    count: int,
    seed: int,
    size_range: tuple[float, float] = (0.4, 0.8),
    height: float = 0.3,
    keepout: float = 2.8,
) -> WorldModel:
    """Add small prisms in free corridor space, preserving connectivity."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    xmin, ymin, xmax, ymax = world.bounds
    placed = 0
    attempts = 0
    while placed < count and attempts < count * 60:
        attempts += 1
        x = float(rng.uniform(xmin + 2.0, xmax - 2.0))
        y = float(rng.uniform(ymin + 2.0, ymax - 2.0))
        w = float(rng.uniform(*size_range))
        d = float(rng.uniform(*size_range))
        candidate = Prism(np.array([x, y]),
                          w, d, height,
                          float(world.floor_height(x, y)) - 0.05)
        box = candidate.aabb()
        clear = True
        for p in world.pillars:
            other = p.aabb()
            if (box[0] - keepout < other[1] and other[0] < box[1] + keepout
                    and box[2] - keepout < other[3] and other[2] < box[3] + keepout):
                clear = False
                break
        if not clear:
            continue
        world.pillars.append(candidate)
        world._slabs = None
        if corridor_graph_connected(world):
            placed += 1
        else:
            world.pillars.pop()
            world._slabs = None
    return world


def corridor_graph_connected(world: WorldModel, step: float = 0.5,
                             inflation: float | None = None) -> bool:
    """True when the free corridor space forms a single connected component.

    Free space is sampled on a coarse grid with pillars and hazards inflated
    by half the footprint diagonal so a connected result implies the robot
    itself can pass.
    """
    if inflation is None:
        inflation = FOOTPRINT_DIAGONAL / 2 + 0.1
    xmin, ymin, xmax, ymax = world.bounds
    xs = np.arange(xmin + step, xmax - step / 2, step)
    ys = np.arange(ymin + step, ymax - step / 2, step)
    gx, gy = np.meshgrid(xs, ys)
    free = np.ones(gx.shape, dtype=bool)
    for p in world.pillars:
        x0, x1, y0, y1 = p.aabb()
        free &= ~((gx > x0 - inflation) & (gx < x1 + inflation)
                  & (gy > y0 - inflation) & (gy < y1 + inflation))
    for h in world.hazards:
        x0, y0 = h.polygon.min(axis=0) - inflation
        x1, y1 = h.polygon.max(axis=0) + inflation
        free &= ~((gx > x0) & (gx < x1) & (gy > y0) & (gy < y1))
    if not free.any():
        return False
    labels = _flood_fill(free)
    return labels.max() == 1


def _flood_fill(free: np.ndarray) -> np.ndarray:
    from scipy import ndimage

    labels, _ = ndimage.label(free)
    return labels


def link_quality(world: WorldModel, robot_pos: np.ndarray) -> str:
    """Radio link state: 'up' iff base-to-robot segment clears every pillar."""
    a = np.asarray(world.base_station, dtype=float)
    b = np.asarray(robot_pos, dtype=float)
    if b.shape[0] == 2:
        b = np.array([b[0], b[1], a[2]])
    slabs = world.slabs
    for i in range(len(slabs)):
        if _segment_hits_aabb(a, b, slabs[i]):
            return "down"
    return "up"


def _segment_hits_aabb(a: np.ndarray, b: np.ndarray, slab: np.ndarray) -> bool:
    lo = np.array([slab[0], slab[2], slab[4]])
    hi = np.array([slab[1], slab[3], slab[5]])
    d = b - a
    tmin, tmax = 0.0, 1.0
    for k in range(3):
        if abs(d[k]) < 1e-12:
            if a[k] < lo[k] or a[k] > hi[k]:
                return False
        else:
            t1 = (lo[k] - a[k]) / d[k]
            t2 = (hi[k] - a[k]) / d[k]
            if t1 > t2:
                t1, t2 = t2, t1
            tmin = max(tmin, t1)
            tmax = min(tmax, t2)
            if tmin > tmax:
                return False
    return True


# ---------------------------------------------------------------------------
# serialization

def world_to_dict(world: WorldModel) -> dict:
    return {
        "version": WORLD_SCHEMA_VERSION,
        "seed": world.seed,
        "cell_size": world.cell_size,
        "origin": world.origin.tolist(),
        "heights": world.heights.tolist(),
        "pillars": [
            {
                "center": p.center.tolist(),
                "width": p.width,
                "depth": p.depth,
                "height": p.height,
                "z0": p.z0,
            }
            for p in world.pillars
        ],
        "hazards": [
            {"polygon": h.polygon.tolist(), "depth": h.depth} for h in world.hazards
        ],
        "bounds": world.bounds.tolist(),
        "base_station": world.base_station.tolist(),
        "roof_height": world.roof_height,
    }


def world_from_dict(data: dict) -> WorldModel:
    version = data.get("version")
    if version != WORLD_SCHEMA_VERSION:
        raise WorldParameterError(f"unsupported world schema version: {version}")
    return WorldModel(
        seed=data["seed"],
        cell_size=data["cell_size"],
        origin=np.array(data["origin"]),
        heights=np.array(data["heights"]),
        pillars=[
            Prism(np.array(p["center"]), p["width"], p["depth"], p["height"], p["z0"])
            for p in data["pillars"]
        ],
        hazards=[Hazard(np.array(h["polygon"]), h["depth"]) for h in data["hazards"]],
        bounds=np.array(data["bounds"]),
        base_station=np.array(data["base_station"]),
        roof_height=data.get("roof_height"),
    )


def save_world(world: WorldModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(world_to_dict(world), fh)


def load_world(path: str | Path) -> WorldModel:
    with open(path) as fh:
        return world_from_dict(json.load(fh))
