import numpy as np
import pytest

from minenav.config import PowerParams, VehicleParams
from minenav.vehicle import (
    OutOfBoundsError,
    VehicleState,
    power_draw,
    step_dynamics,
    wheel_torques,
)
from minenav.world import generate_world


@pytest.fixture(scope="module")
def flat_world():
    return generate_world(0, 0, extent=(60.0, 60.0), roughness=0.0, seed=0)


@pytest.fixture()
def params():
    return VehicleParams(), PowerParams()


def test_straight_line_advance(flat_world, params):
    vp, pp = params
    st = VehicleState.initial(flat_world, 0, 0, 0, vp, pp)
    # both sides 2.0 rad/s = 0.5 m/s, dt 0.02 -> +0.01 m
    st2 = step_dynamics(st, np.array([2.0, 2.0, 2.0, 2.0]), flat_world, 0.02, vp, pp)
    assert st2.position[0] == pytest.approx(0.01, abs=1e-12)
    assert st2.position[1] == pytest.approx(0.0, abs=1e-12)
    assert st2.heading == pytest.approx(0.0, abs=1e-12)


def test_pure_rotation_holds_position(flat_world, params):
    vp, pp = params
    st = VehicleState.initial(flat_world, 0, 0, 0, vp, pp)
    st2 = step_dynamics(st, np.array([-2.0, -2.0, 2.0, 2.0]), flat_world, 0.02, vp, pp)
    assert np.allclose(st2.position[:2], [0.0, 0.0], atol=1e-12)
    expected = 0.25 * 4.0 / (vp.default_slip * vp.track_width) * 0.02
    assert st2.heading == pytest.approx(expected, abs=1e-12)


def test_single_side_heading_oracle(flat_world):
    # chi = 1.2, W = 0.95, wL = 0, wR = 2.0, dt = 0.02
    # closed-form: dheading = r * (wR - wL) / (chi W) * dt
    vp = VehicleParams(default_slip=1.2, track_width=0.95)
    pp = PowerParams()
    st = VehicleState.initial(flat_world, 0, 0, 0, vp, pp)
    st2 = step_dynamics(st, np.array([0.0, 0.0, 2.0, 2.0]), flat_world, 0.02, vp, pp)
    oracle = 0.25 * 2.0 / (1.2 * 0.95) * 0.02
    assert st2.heading == pytest.approx(oracle, abs=1e-15)


def test_rotation_stays_orthonormal(flat_world, params):
    vp, pp = params
    world = generate_world(0, 0, extent=(60.0, 60.0), roughness=0.08, seed=4)
    st = VehicleState.initial(world, 0, 0, 0, vp, pp)
    cmd = np.array([1.2, 1.2, 2.0, 2.0])
    worst = 0.0
    for _ in range(5000):
        st = step_dynamics(st, cmd, world, 0.005, vp, pp)
        R = st.pose[:3, :3]
        worst = max(worst, np.abs(R @ R.T - np.eye(3)).max())
    assert worst < 1e-9


def test_brakes_zero_wheels_in_one_step(flat_world, params):
    vp, pp = params
    st = VehicleState.initial(flat_world, 0, 0, 0, vp, pp)
    st = step_dynamics(st, np.array([2.0, 2.0, 2.0, 2.0]), flat_world, 0.02, vp, pp)
    from dataclasses import replace
    st = replace(st, brakes_engaged=True)
    st2 = step_dynamics(st, np.array([2.0, 2.0, 2.0, 2.0]), flat_world, 0.02, vp, pp)
    assert np.all(st2.wheel_speeds == 0.0)


def test_battery_monotone(flat_world, params):
    vp, pp = params
    st = VehicleState.initial(flat_world, 0, 0, 0, vp, pp)
    charge = st.battery_charge
    for i in range(200):
        cmd = np.array([1.6, 1.6, 2.0, 2.0]) if i % 2 else np.zeros(4)
        st = step_dynamics(st, cmd, flat_world, 0.02, vp, pp)
        assert st.battery_charge <= charge
        charge = st.battery_charge


def test_out_of_bounds_fault(params):
    vp, pp = params
    w = generate_world(0, 0, extent=(10.0, 10.0), roughness=0.0, seed=0)
    st = VehicleState.initial(w, 4.9, 0, 0, vp, pp)
    with pytest.raises(OutOfBoundsError):
        for _ in range(200):
            st = step_dynamics(st, np.array([2.0, 2.0, 2.0, 2.0]), w, 0.02, vp, pp)


def test_dt_contract(flat_world, params):
    vp, pp = params
    st = VehicleState.initial(flat_world, 0, 0, 0, vp, pp)
    with pytest.raises(ValueError):
        step_dynamics(st, np.zeros(4), flat_world, 0.05, vp, pp)
    with pytest.raises(ValueError):
        step_dynamics(st, np.zeros(4), flat_world, 0.0, vp, pp)


def test_terrain_conformance(params):
    vp, pp = params
    world = generate_world(0, 0, extent=(60.0, 60.0), roughness=0.08, seed=4)
    st = VehicleState.initial(world, 3.0, -2.0, 0.4, vp, pp)
    z_floor = float(world.floor_height(np.array(3.0), np.array(-2.0)))
    assert st.position[2] == pytest.approx(z_floor + vp.wheel_radius, abs=0.06)


def test_power_clamp():
    pp = PowerParams()
    torques = np.full(4, 1e6)
    _, currents = power_draw(None, torques, pp)
    assert np.all(currents == pp.max_current_a)


def test_idle_draw_only_when_stopped():
    pp = PowerParams()
    vp = VehicleParams()
    torques = wheel_torques(0.0, 0.0, vp, pp)
    watts, currents = power_draw(None, torques, pp)
    assert np.allclose(currents, pp.idle_current_a)
    assert watts == pytest.approx(4 * pp.idle_current_a * 25.6)
