"""Run, sweep, calibrate and plot-data workflows shared by the CLI and the tests."""

from __future__ import annotations

import copy
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .detection import (DetectorConfig, analyse_log, direct_label, latency_table, mo_label, nrmse, snr)
from .errors import DegenerateRange
from .estimation import numeric_accel
from .sensors import DEG, ImuSampler, calibrate_mounting, imu_true_outputs, write_calibration
from .simulation import SimLog, run_scenario

log = logging.getLogger(__name__)

WORKERS_ENV = "RRRFUSION_WORKERS"


def worker_count(requested=None):
    """Explicit request, else ``$RRRFUSION_WORKERS``, else 1."""
    if requested is not None:
        n = int(requested)
    else:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("worker count must be at least 1")
    return n


@dataclass(eq=False)
class RunResult:
    config: ScenarioConfig
    log: SimLog
    reports: dict
    metrics: dict


def accel_metrics(sim: SimLog):
    """NRMSE and SNR of the EKF and the numeric baseline for every axis the reference moves along."""
    num = numeric_accel(sim.pose_meas, sim.T)
    out = {}
    for j, axis in enumerate(("x", "y", "phi")):
        if np.ptp(sim.ref_pose[:, j]) == 0:
            continue
        truth = sim.accel[:, j]
        try:
            out[f"ekf_nrmse_{axis}"] = float(nrmse(sim.ekf[:, 6 + j], truth))
            out[f"num_nrmse_{axis}"] = float(nrmse(num[:, j], truth))
            out[f"ekf_snr_{axis}_dB"] = float(snr(sim.ekf[:, 6 + j], truth))
            out[f"num_snr_{axis}_dB"] = float(snr(num[:, j], truth))
        except DegenerateRange:
            continue
    return out


def detectors(cfg: ScenarioConfig):
    """(direct detector list, MO detector list) from the config thresholds."""
    return [cfg.detector("direct"), cfg.detector("equal")], cfg.mo_detectors()


def simulate(cfg: ScenarioConfig, seed=None) -> RunResult:
    sim = run_scenario(cfg.setup(seed=seed))
    direct, mo = detectors(cfg)
    return RunResult(cfg, sim, analyse_log(sim, direct, mo), accel_metrics(sim))


def _report_lines(res: RunResult):
    lines = [f"scenario = {res.config.name}", f"kind = {res.log.meta['kind']}", f"seed = {res.log.meta['seed']}"]
    onset = res.log.onset_index()
    lines.append("onset_tick = " + ("-" if onset is None else str(onset)))
    for k, v in res.metrics.items():
        lines.append(f"{k} = {v:.6g}")
    lines.append("")
    lines.append("method,fired,tick,delta_ms,channel,false_positive")
    for name, r in res.reports.items():
        lines.append(",".join([name, str(r.fired).lower(), "-" if r.tick is None else str(r.tick),
                               "-" if r.delta_ms is None else f"{r.delta_ms:g}", r.channel or "-",
                               str(r.false_positive).lower()]))
    return lines


def write_run(res: RunResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res.log.to_csv(out / f"{res.config.name}_log.csv")
    (out / f"{res.config.name}_report.txt").write_text("\n".join(_report_lines(res)) + "\n")
    return out


def _sweep_job(args):
    data, source, seed = args
    cfg = ScenarioConfig(data, Path(source) if source else None)
    res = simulate(cfg, seed)
    return cfg.name, seed, res.reports


def _map(fn, jobs, workers):
    if workers == 1 or len(jobs) == 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
        return list(ex.map(fn, jobs))


def sweep(configs, axis="gains", values=None, workers=None):
    """Latency table across scenarios (gains), seeds, or direct-method thresholds.

    ``gains``: one row per scenario, one column per observer gain plus the
    direct method; all gains share one simulation since the observers do
    not feed back into the loop. ``seeds``: one row per (scenario, seed).
    ``thresholds``: rows per direct force threshold in ``values`` with the
    moment threshold scaled in proportion.
    """
    workers = worker_count(workers)
    configs = list(configs)
    if axis not in ("gains", "seeds", "thresholds"):
        raise ValueError(f"unknown sweep axis {axis!r}")
    if axis == "seeds":
        seeds = list(values) if values is not None else list(range(10))
        jobs = [(c.data, c.source, int(s)) for c in configs for s in seeds]
    else:
        jobs = [(c.data, c.source, None) for c in configs]
    results = _map(_sweep_job, jobs, workers) if axis != "thresholds" else []

    if axis == "gains":
        first = configs[0]
        eq_gain = first.data["detection"]["equal_gain"]
        direct, _ = detectors(first)
        gains = [g for g in first.gains() if values is None or g in set(map(float, values))]
        methods = [direct_label(d) for d in direct] + [mo_label(g) for g in gains]
        rows = {name: {m: reps[m] for m in methods} for name, _, reps in results}
        pairing = (mo_label(eq_gain), direct_label(direct[1])) if eq_gain in gains else None
        return latency_table(rows, methods, pairing)
    if axis == "seeds":
        rows = {f"{name}/seed{seed}": reps for name, seed, reps in results}
        return latency_table(rows)
    if axis == "thresholds":
        if values is None:
            raise ValueError("thresholds axis needs explicit force thresholds")
        rows = {}
        for c in configs:
            res = simulate(c)
            name = c.name
            base = c.detector("direct")
            per = {}
            for f in values:
                d = DetectorConfig(float(f), base.moment_threshold * float(f) / base.force_threshold)
                per[direct_label(d)] = analyse_log(res.log, [d], [])[direct_label(d)]
            rows[name] = per
        return latency_table(rows)


def compare_mounts(cfg: ScenarioConfig, mounts, seed=None):
    """Accuracy metrics of the same run repeated with different IMU mountings.

    ``mounts`` maps a label to ``(position_mm, angles_deg)``. The estimator
    uses each true mounting, and the seed is shared so all runs see the same
    noise draws. Returns ``{label: metrics}``.
    """
    out = {}
    for label, (pos, ang) in mounts.items():
        data = copy.deepcopy(cfg.data)
        data["imu"]["position_mm"] = [float(v) for v in pos]
        data["imu"]["angles_deg"] = [float(v) for v in ang]
        out[label] = simulate(ScenarioConfig(data, cfg.source), seed).metrics
    return out


# ---------------------------------------------------------------- calibration


@dataclass(eq=False)
class CalibrationRun:
    result: object
    truth: object
    position_error_mm: np.ndarray
    angle_error_deg: np.ndarray


def synthetic_calibration_data(cfg: ScenarioConfig, seed=None, noise_scale=None):
    """(states (N, 9), omega (N, 3), accel (N, 3)) from the configured trajectory.

    The platform is taken to follow the excitation trajectory exactly; the
    IMU readings carry noise and quantisation, and a bias only if
    ``calibration.use_bias`` is set.
    """
    scale = cfg.data["calibration"]["noise_scale"] if noise_scale is None else noise_scale
    imu = cfg.imu(noise_scale=scale)
    traj = cfg.trajectory()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed if seed is None else seed))
    bias = None if cfg.data["calibration"]["use_bias"] else (np.zeros(3), np.zeros(3))
    sampler = ImuSampler(imu, rng, bias)
    states = traj.states()
    om = np.empty((len(traj), 3))
    ac = np.empty((len(traj), 3))
    for k in range(len(traj)):
        w, a = imu_true_outputs(traj.pose[k], traj.twist[k], traj.accel[k], imu.mount)
        s = sampler(w, a, traj.t[k])
        om[k], ac[k] = s.omega, s.accel
    return states, om, ac


def calibrate(cfg: ScenarioConfig, seed=None, noise_scale=None) -> CalibrationRun:
    states, om, ac = synthetic_calibration_data(cfg, seed, noise_scale)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed if seed is None else seed, 1]))
    result = calibrate_mounting((om, ac), states, cfg.calibration_bounds(), rng, cfg.pso())
    truth = cfg.true_mount()
    return CalibrationRun(result, truth, (result.mount.position - truth.position) * 1e3,
                          (result.mount.angles - truth.angles) / DEG)


def write_calibration_run(run: CalibrationRun, path):
    extra = {f"position_error_{a}_mm": float(e) for a, e in zip("xyz", run.position_error_mm)}
    extra.update({f"angle_error_{a}_deg": float(e) for a, e in zip("xyz", run.angle_error_deg)})
    write_calibration(path, run.result, extra)


# ---------------------------------------------------------------- plot data


def plot_data(cfg: ScenarioConfig, out_dir, seed=None):
    """Per-figure CSV files: acceleration estimates and force estimates over time."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = simulate(cfg, seed)
    sim = res.log
    num = numeric_accel(sim.pose_meas, sim.T)
    cols = [("t_s", sim.t)]
    for j, (n, u) in enumerate((("x", "mps2"), ("y", "mps2"), ("phi", "radps2"))):
        cols += [(f"true_a{n}_{u}", sim.accel[:, j]), (f"ekf_a{n}_{u}", sim.ekf[:, 6 + j]),
                 (f"num_a{n}_{u}", num[:, j])]
    paths = [out / f"{cfg.name}_accel.csv"]
    _write_cols(paths[0], cols)

    cols = [("t_s", sim.t)]
    for j, n in enumerate(("fx_N", "fy_N", "mz_Nm")):
        cols.append((f"true_{n}", sim.f_ext[:, j]))
        cols.append((f"direct_{n}", sim.f_direct[:, j]))
        for g, gain in enumerate(sim.gains):
            cols.append((f"mo{gain:g}_{n}", sim.f_mo[:, g, j]))
    paths.append(out / f"{cfg.name}_forces.csv")
    _write_cols(paths[1], cols)
    return paths


def _write_cols(path, cols):
    np.savetxt(path, np.column_stack([c for _, c in cols]), delimiter=",",
               header=",".join(h for h, _ in cols), comments="", fmt="%.12g")
