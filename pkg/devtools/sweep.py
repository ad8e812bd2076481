"""Dev harness: short scripted drives over config variants (not shipped)."""
import sys
import types

stub = types.ModuleType('minenav.runtime.mission')
for n in ['ControlMode', 'MissionRunner', 'MissionSpec', 'TelemetryFrame',
          'arbitrate', 'run_mission']:
    setattr(stub, n, None)
sys.modules['minenav.runtime.mission'] = stub

import numpy as np
import time
from minenav.config import Config, NoiseModel
from minenav.world import generate_world, Prism
from minenav.vehicle import VehicleState, step_dynamics
from minenav.sensors import ImuSimulator, raycast_lidar, true_imu_signals
from minenav.estimation import LioPipeline
from minenav.runtime.poses import PoseHistory


def make_world(seed=3, boulders=True):
    w = generate_world(0, 0, extent=(100., 60.), roughness=0.05, seed=seed)
    if boulders:
        rng = np.random.default_rng(seed + 1000)
        for _ in range(16):
            x = rng.uniform(-45, 45)
            y = rng.uniform(8, 25) * (1 if rng.random() < 0.5 else -1)
            sx, sy = rng.uniform(0.8, 2.5, 2)
            h = rng.uniform(0.6, 1.6)
            z0 = float(w.floor_height(np.array(x), np.array(y))) - 0.1
            w.pillars.append(Prism(np.array([x, y]), sx, sy, h + 0.1, z0))
        w._slabs = None
    return w


def drive(cfg, label, steps=8000, boulders=True, seed=3, verbose=False):
    world = make_world(seed=seed, boulders=boulders)
    vp, pp, lp = cfg.vehicle, cfg.power, cfg.lidar
    st = VehicleState.initial(world, -35, 0, 0, vp, pp)
    imu = ImuSimulator(cfg.noise, cfg.imu, np.random.default_rng(1))
    offset = np.array([0., 0., lp.mount_height])
    hist = PoseHistory()
    hist.record(0.0, st.pose, offset)
    pipe = LioPipeline(cfg.estimation, st.pose.copy(), offset)
    rng_lidar = np.random.default_rng(7)
    dt = 0.005
    errs = []
    t0 = time.time()
    for idx in range(1, steps + 1):
        phase = (idx // 1200) % 2
        turn = 0.15 * (1 if phase else -1)
        wl = (0.5 - turn * 0.95 / 2) / 0.25
        wr = (0.5 + turn * 0.95 / 2) / 0.25
        st = step_dynamics(st, np.array([wl, wl, wr, wr]), world, dt, vp, pp)
        t = idx * dt
        hist.record(t, st.pose, offset)
        om, fs = true_imu_signals(st)
        pipe.add_imu(imu.sample(om, fs, t))
        if idx % 20 == 0:
            scan = raycast_lidar(world, hist, t, lp, cfg.noise, rng_lidar)
            est = pipe.process_scan(scan)
            e = np.linalg.norm(est.pose[:3, 3] - st.pose[:3, 3])
            errs.append(e)
            if verbose and idx % 400 == 0:
                print(f'  t={t:.0f} err={e:.3f} fit={pipe.last_fitness:.4f} '
                      f'v={np.round(pipe.world_velocity, 2)}')
    wall = time.time() - t0
    errs = np.array(errs)
    print(f'[{label}] {steps*dt:.0f}s/{wall:.0f}s ({steps*dt/wall:.1f}x) '
          f'max {errs.max():.3f} rmse {np.sqrt((errs**2).mean()):.3f} '
          f'final {errs[-1]:.3f} kf {len(pipe.keyframes)} '
          f'deg {pipe.degenerate_frames}')
    return errs


if __name__ == '__main__':
    base = Config()
    base.noise = NoiseModel.zero()
    drive(base, 'zero')
    noisy = Config()
    drive(noisy, 'default', verbose=True)
