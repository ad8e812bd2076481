import numpy as np
import pytest

from minenav.config import ControlConfig, VehicleParams
from minenav.control import (
    FollowerState,
    RecoveryState,
    UnreachableGoalError,
    VelocityCommand,
    WheelCommand,
    exit_recovery,
    follow_path,
    lookahead_point,
    mix_and_ramp,
    recovery_rotate,
    set_path,
)
from minenav.geometry import planar_pose
from minenav.planner import PlannedPath


def _path(points, stamp=0.0):
    pts = np.asarray(points, dtype=float)
    return PlannedPath(poses=pts, score=1.0, stamp=stamp, goal_id=0,
                       primitive_id=0, station_step=0.1)


def _straight_path(length=7.0, stamp=0.0):
    n = int(length / 0.1) + 1
    xs = np.arange(n) * 0.1
    return _path(np.column_stack([xs, np.zeros(n), np.zeros(n)]), stamp)


@pytest.fixture()
def cfg():
    return ControlConfig()


@pytest.fixture()
def vehicle():
    return VehicleParams()


class TestLookahead:
    def test_straight_carrot(self):
        path = _straight_path()
        carrot = lookahead_point(path, planar_pose(0, 0, 0))
        assert np.allclose(carrot, [0.75, 0.0], atol=1e-9)

    def test_clamped_to_final_pose(self):
        path = _straight_path(length=2.0)
        carrot = lookahead_point(path, planar_pose(1.7, 0, 0))
        assert np.allclose(carrot, [2.0, 0.0], atol=1e-9)

    def test_l_shape_arc_length_oracle(self):
        # legs: 2 m along +x then along +y; robot at the corner. The carrot
        # sits 0.75 m of arc length past the corner, i.e. at (2.0, 0.75).
        n1, n2 = 21, 20
        leg1 = np.column_stack([np.arange(n1) * 0.1, np.zeros(n1), np.zeros(n1)])
        leg2 = np.column_stack([np.full(n2, 2.0), (np.arange(n2) + 1) * 0.1,
                                np.full(n2, np.pi / 2)])
        path = _path(np.vstack([leg1, leg2]))
        carrot = lookahead_point(path, planar_pose(2.0, 0.0, 0.0))
        assert np.allclose(carrot, [2.0, 0.75], atol=1e-9)


class TestFollower:
    def test_carrot_dead_ahead(self, cfg, vehicle):
        st = FollowerState()
        set_path(st, _straight_path())
        cmd = follow_path(st, planar_pose(0, 0, 0), 0.0, 0.05, cfg, vehicle)
        assert cmd.angular_z == pytest.approx(0.0, abs=1e-9)
        assert cmd.linear_x > 0

    def test_carrot_90deg_left(self, cfg, vehicle):
        st = FollowerState()
        n = 30
        path = _path(np.column_stack([np.zeros(n), np.arange(n) * 0.1,
                                      np.full(n, np.pi / 2)]))
        set_path(st, path)
        cmd = follow_path(st, planar_pose(0, 0, 0), 0.0, 0.05, cfg, vehicle)
        assert cmd.angular_z > 0
        assert cmd.linear_x == pytest.approx(0.0, abs=1e-9)

    def test_integral_clamped_under_sustained_error(self, cfg, vehicle):
        st = FollowerState()
        n = 30
        path = _path(np.column_stack([np.zeros(n), np.arange(n) * 0.1,
                                      np.full(n, np.pi / 2)]), stamp=0.0)
        for i in range(10000):
            path.stamp = i * 0.05  # keep fresh
            set_path(st, path)
            cmd = follow_path(st, planar_pose(0, 0, 0), i * 0.05, 0.05, cfg,
                              vehicle)
            assert abs(st.integral_angular) <= cfg.integral_clamp + 1e-12
            assert abs(st.integral_linear) <= cfg.integral_clamp + 1e-12
        # anti-windup bound: kp*e + ki*clamp
        e = np.pi / 2
        assert abs(cmd.angular_z) <= cfg.kp_angular * e \
            + cfg.ki_angular * cfg.integral_clamp + 1e-9

    def test_stale_path_zero_command(self, cfg, vehicle):
        st = FollowerState()
        set_path(st, _straight_path(stamp=0.0))
        cmd = follow_path(st, planar_pose(0, 0, 0), 1.0, 0.05, cfg, vehicle)
        assert cmd.linear_x == 0.0 and cmd.angular_z == 0.0
        assert st.stale_path

    def test_decelerates_at_goal(self, cfg, vehicle):
        st = FollowerState()
        set_path(st, _straight_path(length=1.0))
        cmd = follow_path(st, planar_pose(0.85, 0, 0), 0.0, 0.05, cfg, vehicle)
        assert cmd.linear_x == 0.0


class TestMixAndRamp:
    def test_ramp_reaches_target_in_50_ticks(self, cfg, vehicle):
        # 0 -> 0.5 m/s at 0.5 m/s^2 and 50 Hz: +0.01 m/s per tick, 50 ticks
        prev = WheelCommand(speeds=np.zeros(4))
        cmd = VelocityCommand(0.5, 0.0, "follower", 0.0)
        for tick in range(1, 51):
            prev = mix_and_ramp(cmd, prev, 0.02, cfg, vehicle)
            side = prev.speeds[0] * vehicle.wheel_radius
            assert side == pytest.approx(0.01 * tick, abs=1e-12)
        assert prev.speeds[0] * vehicle.wheel_radius == pytest.approx(0.5)

    def test_mixing_identity_straight(self, cfg, vehicle):
        prev = WheelCommand(speeds=np.full(4, 0.39 / 0.25))
        cmd = VelocityCommand(0.4, 0.0, "follower", 0.0)
        out = mix_and_ramp(cmd, prev, 0.02, cfg, vehicle)
        assert np.allclose(out.speeds * vehicle.wheel_radius, 0.4)

    def test_pure_rotation_mixing_oracle(self, cfg, vehicle):
        # v=0, w=0.4, W=0.95 -> sides -/+ 0.19 m/s
        prev = WheelCommand(speeds=np.array([-0.18, -0.18, 0.18, 0.18]) / 0.25)
        cmd = VelocityCommand(0.0, 0.4, "follower", 0.0)
        out = mix_and_ramp(cmd, prev, 0.02, cfg, vehicle)
        left = (out.speeds[0] + out.speeds[1]) / 2 * vehicle.wheel_radius
        right = (out.speeds[2] + out.speeds[3]) / 2 * vehicle.wheel_radius
        assert left == pytest.approx(-0.19, abs=1e-12)
        assert right == pytest.approx(+0.19, abs=1e-12)

    def test_side_pairs_equal_always(self, cfg, vehicle):
        rng = np.random.default_rng(0)
        prev = WheelCommand(speeds=np.zeros(4))
        for i in range(500):
            cmd = VelocityCommand(rng.uniform(-1, 1), rng.uniform(-1.5, 1.5),
                                  "follower", i * 0.02)
            prev = mix_and_ramp(cmd, prev, 0.02, cfg, vehicle)
            assert prev.speeds[0] == prev.speeds[1]
            assert prev.speeds[2] == prev.speeds[3]

    def test_per_tick_delta_bounded(self, cfg, vehicle):
        rng = np.random.default_rng(1)
        prev = WheelCommand(speeds=np.zeros(4))
        for i in range(2000):
            cmd = VelocityCommand(rng.uniform(-1, 1), rng.uniform(-1.5, 1.5),
                                  "follower", i * 0.02)
            out = mix_and_ramp(cmd, prev, 0.02, cfg, vehicle)
            dl = abs(out.speeds[0] - prev.speeds[0]) * vehicle.wheel_radius
            dr = abs(out.speeds[2] - prev.speeds[2]) * vehicle.wheel_radius
            assert dl <= 0.01 + 1e-12
            assert dr <= 0.01 + 1e-12
            prev = out

    def test_zero_fixed_point(self, cfg, vehicle):
        prev = WheelCommand(speeds=np.zeros(4))
        out = mix_and_ramp(VelocityCommand(0, 0, "follower", 0.0), prev, 0.02,
                           cfg, vehicle)
        assert np.all(out.speeds == 0.0)

    def test_brake_forces_zeros(self, cfg, vehicle):
        prev = WheelCommand(speeds=np.full(4, 2.0))
        out = mix_and_ramp(VelocityCommand(0.8, 0.5, "follower", 0.0), prev,
                           0.02, cfg, vehicle, brake_request=True)
        assert np.all(out.speeds == 0.0)
        assert out.brake_request


class TestRecovery:
    def test_rotates_toward_goal(self, cfg):
        rec = RecoveryState()
        cmd = recovery_rotate(rec, np.array([0.0, 5.0, 0.0]),
                              planar_pose(0, 0, 0), 0.0, cfg)
        assert cmd.linear_x == 0.0
        assert cmd.angular_z > 0

    def test_full_turn_raises_unreachable(self, cfg):
        rec = RecoveryState()
        with pytest.raises(UnreachableGoalError):
            for i in range(1000):
                heading = i * 0.05
                recovery_rotate(rec, np.array([5.0, 0.0, 0.0]),
                                planar_pose(0, 0, heading), i * 0.1, cfg)

    def test_exit_resets(self, cfg):
        rec = RecoveryState()
        recovery_rotate(rec, np.array([5.0, 0.0, 0.0]), planar_pose(0, 0, 0),
                        0.0, cfg)
        exit_recovery(rec)
        assert not rec.active and rec.rotated == 0.0
