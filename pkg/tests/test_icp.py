import numpy as np
import pytest

from minenav.estimation import (
    DegenerateRegistrationError,
    TargetMap,
    estimate_normals,
    icp_register,
    voxel_downsample,
)
from minenav.geometry import planar_pose, se3_log, transform_inverse, transform_points


def _structured_cloud(seed=0, n=3000):
    """Floor patch plus two walls: fully constrains all six DOF."""
    rng = np.random.default_rng(seed)
    floor = np.column_stack([rng.uniform(-8, 8, n), rng.uniform(-8, 8, n),
                             0.02 * np.sin(rng.uniform(-8, 8, n))])
    wall_x = np.column_stack([np.full(n // 2, 8.0), rng.uniform(-8, 8, n // 2),
                              rng.uniform(0, 2.5, n // 2)])
    wall_y = np.column_stack([rng.uniform(-8, 8, n // 2), np.full(n // 2, -8.0),
                              rng.uniform(0, 2.5, n // 2)])
    return np.vstack([floor, wall_x, wall_y])


@pytest.fixture(scope="module")
def cloud():
    return _structured_cloud()


@pytest.fixture(scope="module")
def target(cloud):
    return TargetMap.from_points(cloud, voxel=0.3)


def test_self_registration_identity(target):
    # identical clouds: every point matches itself exactly
    res = icp_register(target.points.copy(), target, init=np.eye(4))
    assert np.abs(res.transform - np.eye(4)).max() < 1e-6
    assert res.fitness < 1e-6


def test_recover_constructed_transform(cloud):
    # the test constructs the transform; recovering it is the oracle
    true = planar_pose(0.10, 0.0, 0.05)
    source = voxel_downsample(cloud, 0.35)
    target = TargetMap.from_points(transform_points(true, source))
    res = icp_register(source, target, init=np.eye(4))
    err = se3_log(transform_inverse(true) @ res.transform)
    assert np.abs(err).max() < 1e-3
    assert res.converged


def test_objective_non_increasing_fixed_correspondences(cloud, target):
    rng = np.random.default_rng(4)
    for trial in range(3):
        xi = np.concatenate([rng.uniform(-0.2, 0.2, 2), [0.0],
                             [0.0, 0.0, rng.uniform(-0.1, 0.1)]])
        from minenav.geometry import se3_exp
        source = transform_points(se3_exp(xi), voxel_downsample(cloud, 0.5))
        res = icp_register(source, target, init=np.eye(4))
        for pre, post in res.objective_steps:
            assert post <= pre + 1e-12


def test_degenerate_raises():
    rng = np.random.default_rng(1)
    target = TargetMap.from_points(rng.uniform(0, 1, (200, 3)), voxel=None)
    far_source = rng.uniform(50, 51, (100, 3))
    with pytest.raises(DegenerateRegistrationError):
        icp_register(far_source, target, init=np.eye(4))
    with pytest.raises(DegenerateRegistrationError):
        icp_register(np.zeros((0, 3)), target, init=np.eye(4))


def test_voxel_downsample_merges():
    pts = np.array([[0.01, 0.01, 0.0], [0.02, 0.02, 0.0], [5.0, 5.0, 5.0]])
    out = voxel_downsample(pts, 0.2)
    assert len(out) == 2
    assert np.allclose(sorted(out[:, 0]), [0.015, 5.0])


def test_voxel_downsample_deterministic():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-4, 4, (5000, 3))
    assert np.array_equal(voxel_downsample(pts, 0.3), voxel_downsample(pts, 0.3))


def test_normals_on_plane():
    rng = np.random.default_rng(3)
    plane = np.column_stack([rng.uniform(0, 5, 500), rng.uniform(0, 5, 500),
                             np.zeros(500)])
    normals = estimate_normals(plane, k=8)
    assert np.allclose(np.abs(normals[:, 2]), 1.0, atol=1e-9)
