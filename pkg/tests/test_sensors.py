import numpy as np
import pytest

from minenav.config import ImuParams, LidarParams, NoiseModel
from minenav.geometry import make_transform, planar_pose
from minenav.sensors import (
    ConstantTwistSampler,
    ImuSimulator,
    local_ray_directions,
    raycast_lidar,
)
from minenav.world import Prism, generate_world


@pytest.fixture(scope="module")
def flat_world():
    return generate_world(0, 0, extent=(120.0, 120.0), roughness=0.0, seed=0)


def _static_sampler(x=0.0, y=0.0, z=1.0, heading=0.0, t_end=0.1):
    pose = planar_pose(x, y, heading, z=z)
    return ConstantTwistSampler(pose, np.zeros(3), np.zeros(3), t_end)


def test_slant_range_oracle(flat_world):
    # sensor 1.0 m above flat floor; steepest channel at -22.5 deg
    # slant range = 1.0 / sin(22.5 deg) = 2.613125929752753 (trig oracle)
    scan = raycast_lidar(flat_world, _static_sampler(), 0.1, LidarParams())
    low = scan.points[scan.points[:, 4] == 0]
    r = np.linalg.norm(low[:, :3], axis=1)
    assert np.allclose(r, 2.613125929752753, atol=1e-9)


def test_horizontal_beam_no_return():
    w = generate_world(0, 0, extent=(120.0, 120.0), roughness=0.0, seed=0)
    params = LidarParams(channels=3, vertical_fov_deg=10.0)  # one channel at 0 deg
    scan = raycast_lidar(w, _static_sampler(), 0.1, params)
    rings = scan.points[:, 4]
    assert not np.any(rings == 1), "0-degree beam over flat floor must not return"


def test_pillar_face_range(flat_world):
    w = generate_world(0, 0, extent=(120.0, 120.0), roughness=0.0, seed=0)
    w.pillars.append(Prism(np.array([6.0, 0.0]), 2.0, 4.0, 3.0, -0.1))
    params = LidarParams(channels=3, vertical_fov_deg=10.0)
    scan = raycast_lidar(w, _static_sampler(), 0.1, params)
    mid = scan.points[scan.points[:, 4] == 1]
    ahead = mid[np.abs(np.arctan2(mid[:, 1], mid[:, 0])) < 0.01]
    assert len(ahead) > 0
    assert np.allclose(np.linalg.norm(ahead[0, :3]), 5.0, atol=1e-9)


def test_points_on_surfaces_zero_noise(flat_world):
    # moving + rotating sensor: transformed by the true per-point pose,
    # every point must land on the floor plane
    sampler = ConstantTwistSampler(planar_pose(0, 0, 0.3, z=1.0),
                                   np.array([0.6, 0.0, 0.0]),
                                   np.array([0.0, 0.0, 0.5]), 0.1)
    scan = raycast_lidar(flat_world, sampler, 0.1, LidarParams())
    times = scan.stamp_start + scan.points[:, 3]
    quats, trans = sampler.sample(times)
    from minenav.sensors import _quats_to_matrices
    R = _quats_to_matrices(quats)
    world = np.einsum("nij,nj->ni", R, scan.points[:, :3]) + trans
    assert np.abs(world[:, 2]).max() < 1e-6


def test_max_range_omitted(flat_world):
    params = LidarParams(max_range=2.0)
    scan = raycast_lidar(flat_world, _static_sampler(), 0.1, params)
    assert len(scan) == 0  # nearest floor hit is 2.61 m


def test_offsets_monotone_and_bounded(flat_world):
    scan = raycast_lidar(flat_world, _static_sampler(), 0.1, LidarParams())
    offs = scan.points[:, 3]
    assert np.all(np.diff(offs) >= 0)
    assert offs.min() >= 0.0 and offs.max() <= 0.1


def test_range_noise_and_dropout_deterministic(flat_world):
    noise = NoiseModel(lidar_range_sigma=0.05, lidar_dropout_prob=0.3, rng_seed=5)
    a = raycast_lidar(flat_world, _static_sampler(), 0.1, LidarParams(),
                      noise, np.random.default_rng(42))
    b = raycast_lidar(flat_world, _static_sampler(), 0.1, LidarParams(),
                      noise, np.random.default_rng(42))
    assert np.array_equal(a.points, b.points)
    full = raycast_lidar(flat_world, _static_sampler(), 0.1, LidarParams())
    assert len(a) < len(full)  # dropouts removed some returns


def test_local_ray_directions_unit():
    dirs, elev = local_ray_directions(LidarParams())
    assert np.allclose(np.linalg.norm(dirs, axis=2), 1.0)
    assert elev[0] == pytest.approx(-np.deg2rad(22.5))
    assert elev[-1] == pytest.approx(np.deg2rad(22.5))


class TestImu:
    def _sim(self, noise, seed=1):
        return ImuSimulator(noise, ImuParams(), np.random.default_rng(seed))

    def test_stationary_statics(self):
        sim = self._sim(NoiseModel.zero())
        s = sim.sample(np.zeros(3), np.array([0.0, 0.0, 9.81]), 0.0)
        assert np.allclose(s.angular_velocity, 0.0)
        assert np.allclose(s.linear_acceleration, [0.0, 0.0, 9.81])

    def test_yaw_rate_passthrough(self):
        sim = self._sim(NoiseModel.zero())
        s = sim.sample(np.array([0.0, 0.0, 0.1]), np.array([0.0, 0.0, 9.81]), 0.0)
        assert s.angular_velocity[2] == pytest.approx(0.1)

    def test_seeded_streams_identical(self):
        n = NoiseModel(rng_seed=7)
        a = self._sim(n, seed=7)
        b = self._sim(n, seed=7)
        for i in range(100):
            sa = a.sample(np.zeros(3), np.array([0.0, 0.0, 9.81]), i * 0.005)
            sb = b.sample(np.zeros(3), np.array([0.0, 0.0, 9.81]), i * 0.005)
            assert np.array_equal(sa.angular_velocity, sb.angular_velocity)
            assert np.array_equal(sa.linear_acceleration, sb.linear_acceleration)
            assert sa.fog_yaw_rate == sb.fog_yaw_rate

    def test_fog_on_half_rate_grid(self):
        sim = self._sim(NoiseModel.zero())
        have = [sim.sample(np.zeros(3), np.zeros(3), i * 0.005).fog_yaw_rate
                for i in range(6)]
        assert [v is not None for v in have] == [True, False, True, False, True, False]

    def test_fog_lower_noise(self):
        noise = NoiseModel(gyro_white_sigma=1e-2, fog_white_sigma=1e-5, rng_seed=3)
        sim = self._sim(noise, seed=3)
        gyro_z, fog = [], []
        for i in range(4000):
            s = sim.sample(np.zeros(3), np.array([0.0, 0.0, 9.81]), i * 0.005)
            gyro_z.append(s.angular_velocity[2])
            if s.fog_yaw_rate is not None:
                fog.append(s.fog_yaw_rate)
        assert np.std(fog) < np.std(gyro_z) / 10
