"""Time the hot kernels with numba and with the pure-numpy fallback.

Each mode runs in its own interpreter because the switch is read at import:

    python benchmarks/bench_kernels.py            # both modes, side by side
    python benchmarks/bench_kernels.py --worker   # one mode, current environment
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def worker(repeat, ticks, particles):
    from rrrfusion import _kernels as K
    from rrrfusion._jit import NUMBA_ENABLED
    from rrrfusion.dynamics import DynamicsParams
    from rrrfusion.kinematics import RobotGeometry
    from rrrfusion.sensors import GRAVITY, ImuMount
    from rrrfusion.simulation import excitation_trajectory

    geo = RobotGeometry.symmetric()
    dyn = DynamicsParams.default(geo)
    contacts = np.zeros((1, K.CONTACT_SIZE))
    contacts[0] = [0, 0, 0.0, 0.1, 0.0, 0.3, 0.0, -1.0, 0.0, 5e4, 50.0]
    tau = np.array([0.3, -0.2, 0.1])
    zero = np.zeros(3)

    def plant():
        x, v = np.zeros(3), np.zeros(3)
        for _ in range(ticks):
            x, v, _ = K.rk4_tick(x, v, tau, zero, geo.packed, dyn.packed, contacts, 1e-3, 10)

    def terms():
        pose = np.array([0.02, -0.01, 0.1])
        twist = np.array([0.3, 0.2, 0.5])
        for _ in range(ticks):
            K.model_terms(pose, twist, geo.packed, dyn.packed)

    traj = excitation_trajectory(2.0)
    states = traj.states()
    mount = ImuMount.from_mm_deg([75, 54, -97], [2.2, 3.1, 2.8])
    om, ac = K.imu_outputs_batch(states, mount.position, mount.R_se, GRAVITY)
    swarm = np.random.default_rng(0).normal(mount.as_vector(), 0.01, (particles, 6))

    def pso_cost():
        K.calibration_objective_batch(swarm, states, om, ac, 1.0, 1.0, GRAVITY)

    res = {
        "numba": NUMBA_ENABLED,
        f"plant_{ticks}_ticks_s": _best(plant, repeat),
        f"model_terms_{ticks}x_s": _best(terms, repeat),
        f"pso_cost_{particles}_particles_s": _best(pso_cost, repeat),
    }
    print(json.dumps(res))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--worker", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--ticks", type=int, default=200)
    ap.add_argument("--particles", type=int, default=50)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat, args.ticks, args.particles)
        return
    rows = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, RRRFUSION_NO_NUMBA=flag)
        cmd = [sys.executable, __file__, "--worker", "--repeat", str(args.repeat),
               "--ticks", str(args.ticks), "--particles", str(args.particles)]
        out = subprocess.run(cmd, env=env, check=True, capture_output=True, text=True).stdout
        rows[label] = json.loads(out.strip().splitlines()[-1])
    keys = [k for k in rows["numba"] if k != "numba"]
    print(f"{'kernel':32s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s}")
    for k in keys:
        a, b = rows["numba"][k], rows["numpy"][k]
        print(f"{k:32s} {a:10.4f} {b:10.4f} {b / a:8.1f}")


if __name__ == "__main__":
    main()
