import json

import numpy as np
import pytest

from minenav.world import (
    WorldParameterError,
    corridor_graph_connected,
    generate_world,
    link_quality,
    load_world,
    save_world,
    scatter_obstacles,
    world_from_dict,
    world_to_dict,
)


def test_pillar_count_and_pitch():
    w = generate_world(4, 4, pitch=12.0, pillar_size=6.0, seed=7)
    assert len(w.pillars) == 16
    xs = sorted({p.center[0] for p in w.pillars})
    assert np.allclose(np.diff(xs), 12.0)


def test_same_seed_bit_identical():
    a = generate_world(4, 4, pitch=12.0, pillar_size=6.0, seed=7, hazard_density=0.5)
    b = generate_world(4, 4, pitch=12.0, pillar_size=6.0, seed=7, hazard_density=0.5)
    assert np.array_equal(a.heights, b.heights)
    assert len(a.pillars) == len(b.pillars)
    for pa, pb in zip(a.pillars, b.pillars):
        assert np.array_equal(pa.center, pb.center)
    assert len(a.hazards) == len(b.hazards)
    for ha, hb in zip(a.hazards, b.hazards):
        assert np.array_equal(ha.polygon, hb.polygon)


def test_wide_pillars_accepted():
    # stone-mine scale pillars
    w = generate_world(2, 2, pitch=28.0, pillar_size=21.5, seed=1)
    assert all(p.width == 21.5 for p in w.pillars)


def test_invalid_geometry_rejected():
    with pytest.raises(WorldParameterError):
        generate_world(2, 2, pitch=6.0, pillar_size=6.0, seed=0)
    with pytest.raises(WorldParameterError):
        generate_world(2, 2, pitch=7.0, pillar_size=6.0, seed=0)  # corridor 1 m


def test_heights_finite_and_bounded():
    w = generate_world(3, 3, pitch=12.0, pillar_size=6.0, roughness=0.05, seed=2)
    assert np.all(np.isfinite(w.heights))
    assert np.abs(w.heights).max() <= 0.05 + 1e-12


def test_hazards_keep_corridors_connected():
    w = generate_world(4, 4, pitch=13.0, pillar_size=6.0, seed=11, hazard_density=1.0)
    assert len(w.hazards) > 0
    assert corridor_graph_connected(w)


def test_scatter_obstacles_connected():
    w = generate_world(0, 0, extent=(30.0, 30.0), roughness=0.03, seed=5)
    w = scatter_obstacles(w, 8, seed=99)
    assert len(w.pillars) == 8
    assert corridor_graph_connected(w)


def test_link_quality_line_of_sight():
    w = generate_world(4, 4, pitch=12.0, pillar_size=6.0, seed=7,
                       base_station=(-6.0, -6.0, 1.5))
    # same corridor as base: no pillar on the segment
    assert link_quality(w, np.array([6.0, -6.0, 0.5])) == "up"
    # pillar (0,0) sits between base and a point across it
    assert link_quality(w, np.array([6.0, 6.0, 0.5])) == "down"
    # degenerate segment: robot at the base station
    assert link_quality(w, w.base_station.copy()) == "up"


def test_link_quality_symmetric():
    w = generate_world(4, 4, pitch=12.0, pillar_size=6.0, seed=7,
                       base_station=(-6.0, -6.0, 1.5))
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = np.array([rng.uniform(-8, 40), rng.uniform(-8, 40), 0.5])
        forward = link_quality(w, p)
        swapped = generate_world(4, 4, pitch=12.0, pillar_size=6.0, seed=7,
                                 base_station=tuple(p))
        assert forward == link_quality(swapped, np.array([-6.0, -6.0, 1.5]))


def test_world_json_round_trip(tmp_path):
    w = generate_world(3, 2, pitch=12.0, pillar_size=6.0, seed=9,
                       hazard_density=0.5, roof_height=3.0)
    path = tmp_path / "world.json"
    save_world(w, path)
    data = json.loads(path.read_text())
    assert data["version"] == 1
    w2 = load_world(path)
    assert np.array_equal(w.heights, w2.heights)
    assert w2.roof_height == 3.0
    assert len(w2.pillars) == len(w.pillars)
    assert len(w2.hazards) == len(w.hazards)


def test_world_schema_version_checked():
    w = generate_world(1, 1, pitch=12.0, pillar_size=6.0, seed=0)
    data = world_to_dict(w)
    data["version"] = 99
    with pytest.raises(WorldParameterError):
        world_from_dict(data)


def test_floor_height_bilinear():
    w = generate_world(0, 0, extent=(20.0, 20.0), roughness=0.05, seed=3)
    xs = np.array([0.0, 1.3, -4.2])
    ys = np.array([0.0, -2.1, 3.3])
    h = w.floor_height(xs, ys)
    assert h.shape == (3,)
    assert np.all(np.abs(h) <= 0.05 + 1e-12)
