"""Fixed-step closed-loop simulation of the 3-RRR machine with contacts.

One control tick (1 ms by default):

1. truth state -> encoder and IMU samples
2. forward + differential kinematics from the encoders
3. EKF, momentum observers, direct method, threshold detectors
4. computed-torque controller -> motor torques
5. RK4 plant integration over the tick with the torques held
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .dynamics import DynamicsParams, ModelTerms
from .errors import NoConvergence, SimulationError, Singular, Unreachable
from .estimation import Ekf, EkfConfig, MomentumObserver, direct_force
from .kinematics import ContactLocation, RobotGeometry, forward_kinematics, inverse_kinematics
from .sensors import EncoderModel, ImuModel, ImuMount, ImuSampler, imu_true_outputs, sample_encoders

log = logging.getLogger(__name__)

ONSET_FORCE = 0.1  # N, true contact force that marks contact onset


# ---------------------------------------------------------------- trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    pose: np.ndarray
    twist: np.ndarray
    accel: np.ndarray
    v_max: float = np.inf
    a_max: float = np.inf

    @property
    def T(self):
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 1e-3

    def __len__(self):
        return self.t.size

    def states(self):
        """(N, 9) stacked [pose, twist, accel]."""
        return np.hstack([self.pose, self.twist, self.accel])

    def check_reachable(self, geo: RobotGeometry, stride=1):
        for k in range(0, len(self), stride):
            q = inverse_kinematics(self.pose[k], geo)
            if K.is_singular(q.q, self.pose[k], geo.packed):
                raise Singular(f"trajectory sample {k} is singular")


def _trapezoid(length, v_max, a_max):
    """(accel time, cruise time, peak speed) of a rest-to-rest move."""
    if length <= 0:
        return 0.0, 0.0, 0.0
    if length >= v_max ** 2 / a_max:
        ta = v_max / a_max
        return ta, (length - v_max ** 2 / a_max) / v_max, v_max
    vp = np.sqrt(length * a_max)
    return vp / a_max, 0.0, vp


def waypoint_trajectory(waypoints, v_max, a_max, dwell=0.1, T=1e-3, geo=None):
    """Straight rest-to-rest moves between poses with trapezoidal speed.

    The platform angle is interpolated along the translational path. Each
    waypoint (including the first and last) is held for ``dwell`` seconds.
    """
    if v_max <= 0 or a_max <= 0:
        raise ValueError("limits must be positive")
    wp = np.asarray(waypoints, dtype=float)
    if wp.shape[1] == 2:
        wp = np.column_stack([wp, np.zeros(len(wp))])
    # (t0, duration, start, delta, ta, tc, vp, length)
    segs = []
    t0 = 0.0
    for i in range(len(wp) - 1):
        t0 += dwell
        delta = wp[i + 1] - wp[i]
        length = float(np.hypot(delta[0], delta[1]))
        ta, tc, vp = _trapezoid(length, v_max, a_max)
        dur = 2 * ta + tc
        segs.append((t0, dur, wp[i], delta, ta, tc, vp, length))
        t0 += dur
    total = t0 + dwell
    n = int(round(total / T)) + 1
    t = np.arange(n) * T
    pose = np.tile(wp[0], (n, 1))
    twist = np.zeros((n, 3))
    accel = np.zeros((n, 3))
    for k, tk in enumerate(t):
        for (s0, dur, start, delta, ta, tc, vp, length) in segs:
            if tk < s0:
                break
            if tk >= s0 + dur or length == 0:
                pose[k] = start + delta
                continue
            tau = tk - s0
            if tau < ta:
                s, sd, sdd = 0.5 * a_max * tau ** 2, a_max * tau, a_max
            elif tau < ta + tc:
                s, sd, sdd = 0.5 * a_max * ta ** 2 + vp * (tau - ta), vp, 0.0
            else:
                r = dur - tau
                s, sd, sdd = length - 0.5 * a_max * r ** 2, a_max * r, -a_max
            u = delta / length
            pose[k] = start + s * u
            twist[k] = sd * u
            accel[k] = sdd * u
            break
    pose[:, 2] = np.arctan2(np.sin(pose[:, 2]), np.cos(pose[:, 2]))
    traj = Trajectory(t, pose, twist, accel, v_max, a_max)
    if geo is not None:
        for k in (0, *range(0, n, 10), n - 1):
            try:
                inverse_kinematics(pose[k], geo)
            except Unreachable as exc:
                raise Unreachable(exc.leg, f"trajectory leaves the workspace at t={t[k]:.3f} s (leg {exc.leg})")
    return traj


def generate_rectangle_trajectory(corners, limits, dwell=0.1, T=1e-3, phi=0.0, laps=1, geo=None):
    """Closed rectangle through ``corners`` (4 x 2) with ``limits = (v_max, a_max)``."""
    c = np.asarray(corners, dtype=float).reshape(4, 2)
    loop = np.vstack([np.tile(c, (laps, 1)), c[:1]])
    wp = np.column_stack([loop, np.full(len(loop), phi)])
    return waypoint_trajectory(wp, limits[0], limits[1], dwell, T, geo)


def excitation_trajectory(duration, T=1e-3, center=(0.0, 0.0, 0.0), amplitude=(0.04, 0.04, 0.3),
                          frequency=(1.3, 1.7, 2.3), ramp=0.25, geo=None):
    """Multi-sine motion in x, y and phi with a smooth ramp-in, for calibration."""
    t = np.arange(int(round(duration / T)) + 1) * T
    center = np.asarray(center, float)
    amp = np.asarray(amplitude, float)
    w = 2 * np.pi * np.asarray(frequency, float)
    # quintic smoothstep envelope: value, slope and curvature continuous at both ends
    if ramp > 0:
        x = np.clip(t / ramp, 0, 1)
        e = x ** 3 * (10 - 15 * x + 6 * x ** 2)
        ed = 30 * x ** 2 * (1 - x) ** 2 / ramp
        edd = 60 * x * (1 - x) * (1 - 2 * x) / ramp ** 2
    else:
        e, ed, edd = np.ones_like(t), np.zeros_like(t), np.zeros_like(t)
    s = np.sin(np.outer(t, w))
    c = np.cos(np.outer(t, w))
    pose = center + amp * e[:, None] * s
    twist = amp * (ed[:, None] * s + e[:, None] * w * c)
    accel = amp * (edd[:, None] * s + 2 * ed[:, None] * w * c - e[:, None] * w ** 2 * s)
    traj = Trajectory(t, pose, twist, accel)
    if geo is not None:
        traj.check_reachable(geo, stride=10)
    return traj


# ---------------------------------------------------------------- contacts


SCENARIO_KINDS = ("none", "platform_collision", "link_collision", "clamping")


@dataclass(frozen=True, eq=False)
class ContactScenario:
    """Penalty contacts against walls fixed to the base.

    Without explicit ``walls`` each wall is placed where its material point
    is on the reference trajectory at time ``onset``, facing that point's
    velocity.
    """

    kind: str = "none"
    locations: tuple = ()
    onset: float = 0.0
    stiffness: float = 5e4
    damping: float = 50.0
    walls: np.ndarray | None = None  # (n, 4): point x, y, normal x, y

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown contact kind {self.kind!r}")
        object.__setattr__(self, "locations", tuple(self.locations))
        if self.kind == "none" and self.locations:
            raise ValueError("contact-free scenario cannot carry locations")
        if self.kind == "clamping" and len(self.locations) != 2:
            raise ValueError("clamping needs exactly two contact locations")
        if self.kind in ("platform_collision", "link_collision") and len(self.locations) != 1:
            raise ValueError(f"{self.kind} needs exactly one contact location")
        if self.stiffness < 0 or self.damping < 0:
            raise ValueError("stiffness and damping must be non-negative")

    def contact_rows(self, trajectory: Trajectory, geo: RobotGeometry):
        """Kernel representation, (n, CONTACT_SIZE)."""
        rows = np.zeros((len(self.locations), K.CONTACT_SIZE))
        if not self.locations:
            return rows
        if self.walls is None and not trajectory.t[0] <= self.onset <= trajectory.t[-1]:
            raise ValueError("contact onset lies outside the trajectory")
        k = int(round((self.onset - trajectory.t[0]) / trajectory.T))
        pose, twist = trajectory.pose[k], trajectory.twist[k]
        q = inverse_kinematics(pose, geo).q
        J = K.jac_qx(q, pose, geo.packed)
        for i, loc in enumerate(self.locations):
            args = loc.kernel_args()
            if self.walls is not None:
                wall = np.asarray(self.walls[i], dtype=float)
                point, normal = wall[:2], wall[2:] / np.linalg.norm(wall[2:])
            else:
                point = K.point_position(q, pose, geo.packed, *args)[:2]
                vel = (K.point_jacobian(q, pose, geo.packed, J, *args) @ twist)[:2]
                speed = np.linalg.norm(vel)
                if speed == 0:
                    raise ValueError(f"contact point {i} is at rest at onset; give walls explicitly")
                normal = -vel / speed
            rows[i] = [args[0], args[1], args[2], args[3], args[4], point[0], point[1],
                       normal[0], normal[1], self.stiffness, self.damping]
        return rows


def contact_force(rows, q, pose, twist, geo: RobotGeometry):
    """True platform wrench and per-contact planar forces (n, 2)."""
    q = np.asarray(getattr(q, "q", q), dtype=float)
    pose = np.asarray(pose, dtype=float)
    J = K.jac_qx(q, pose, geo.packed)
    return K.contact_wrench(q, pose, np.asarray(twist, float), geo.packed, J, np.asarray(rows, float))


# ---------------------------------------------------------------- plant


_NO_CONTACTS = np.zeros((0, K.CONTACT_SIZE))


def _raise_status(status, where):
    if status == K.UNREACHABLE:
        raise Unreachable(-1, f"plant left the workspace ({where})")
    if status == K.SINGULAR:
        raise Singular(f"plant reached a singular pose ({where})")
    if status != K.OK:
        raise SimulationError(f"kernel status {status} ({where})")


def step_plant(pose, twist, tau_m, geo: RobotGeometry, params: DynamicsParams, *, contacts=None, f_ext=None,
               dt=1e-3, substeps=10):
    """RK4 over one tick with ``substeps`` sub-steps; returns (pose, twist).

    The joint vector is re-derived from the pose by inverse kinematics at
    every evaluation, so the loop closure holds to machine precision.
    """
    if dt <= 0 or substeps < 1:
        raise ValueError("dt and substeps must be positive")
    rows = _NO_CONTACTS if contacts is None else np.asarray(contacts, float)
    fext = np.zeros(3) if f_ext is None else np.asarray(f_ext, float)
    x, v, status = K.rk4_tick(np.asarray(pose, float), np.asarray(twist, float), np.asarray(tau_m, float),
                              fext, geo.packed, params.packed, rows, dt, substeps)
    _raise_status(status, "step_plant")
    return x, v


def plant_acceleration(pose, twist, tau_m, geo, params, contacts=None, f_ext=None):
    """(platform acceleration, contact wrench) of the plant."""
    rows = _NO_CONTACTS if contacts is None else np.asarray(contacts, float)
    fext = np.zeros(3) if f_ext is None else np.asarray(f_ext, float)
    acc, fc, status = K.plant_accel(np.asarray(pose, float), np.asarray(twist, float), np.asarray(tau_m, float),
                                    fext, geo.packed, params.packed, rows)
    _raise_status(status, "plant_acceleration")
    return acc, fc


# ---------------------------------------------------------------- controller


class ComputedTorqueController:
    """Operational-space computed torque with joint-torque saturation."""

    def __init__(self, kp=400.0, kd=40.0, tau_limit=40.0):
        self.kp = np.broadcast_to(np.asarray(kp, float), (3,)).copy()
        self.kd = np.broadcast_to(np.asarray(kd, float), (3,)).copy()
        self.tau_limit = float(tau_limit)

    def __call__(self, ref_pose, ref_twist, ref_accel, pose, twist, terms: ModelTerms):
        """Return (joint torques, the operational-space wrench they produce)."""
        e = np.asarray(ref_pose, float) - pose
        e[2] = K.wrap_angle(e[2])
        ed = np.asarray(ref_twist, float) - twist
        f = terms.M @ (np.asarray(ref_accel, float) + self.kp * e + self.kd * ed) + terms.c + terms.g + terms.f_fr
        H = terms.H
        tau = np.linalg.solve(H.T, f)
        tau = np.clip(tau, -self.tau_limit, self.tau_limit)
        return tau, H.T @ tau


# ---------------------------------------------------------------- closed loop


@dataclass(frozen=True)
class Thresholds:
    force: float
    moment: float


@dataclass(eq=False)
class SimulationSetup:
    geometry: RobotGeometry
    plant: DynamicsParams
    model: DynamicsParams
    trajectory: Trajectory
    scenario: ContactScenario = field(default_factory=ContactScenario)
    encoder: EncoderModel = field(default_factory=EncoderModel)
    imu: ImuModel = field(default_factory=ImuModel)
    estimator_mount: ImuMount | None = None
    ekf: EkfConfig = field(default_factory=EkfConfig.default)
    mo_gains: tuple = (20.0, 100.0, 135.0, 200.0, 500.0)
    controller: ComputedTorqueController = field(default_factory=ComputedTorqueController)
    direct_thresholds: Thresholds | None = None
    mo_thresholds: tuple | None = None
    stop_on_detection: str = "none"  # none | direct | mo:<index>
    substeps: int = 10
    seed: int = 0
    name: str = "scenario"


@dataclass(eq=False)
class SimLog:
    """Per-tick record of one run (all SI units)."""

    t: np.ndarray
    ref_pose: np.ndarray
    pose: np.ndarray
    twist: np.ndarray
    accel: np.ndarray
    f_ext: np.ndarray
    contact_forces: np.ndarray  # (N, n_contacts, 2)
    q_a_meas: np.ndarray
    imu_omega: np.ndarray
    imu_accel: np.ndarray
    pose_meas: np.ndarray
    twist_meas: np.ndarray
    ekf: np.ndarray  # (N, 9)
    tau: np.ndarray
    f_m: np.ndarray
    f_direct: np.ndarray
    f_mo: np.ndarray  # (N, G, 3)
    flag_direct: np.ndarray
    flag_mo: np.ndarray  # (N, G)
    meta: dict = field(default_factory=dict)

    @property
    def gains(self):
        return tuple(self.meta.get("mo_gains", ()))

    @property
    def T(self):
        return float(self.t[1] - self.t[0])

    def contact_magnitude(self):
        if self.contact_forces.shape[1] == 0:
            return np.zeros(self.t.size)
        return np.max(np.linalg.norm(self.contact_forces, axis=2), axis=1)

    def onset_index(self):
        """First tick whose true contact force exceeds ``ONSET_FORCE``, or None."""
        idx = np.flatnonzero(self.contact_magnitude() > ONSET_FORCE)
        return int(idx[0]) if idx.size else None

    def columns(self):
        """Ordered (header, column) pairs for CSV export."""
        cols = [("t_s", self.t)]

        def add(prefix, arr, names):
            for j, n in enumerate(names):
                cols.append((f"{prefix}{n}", arr[:, j]))

        pose_n = ("x_m", "y_m", "phi_rad")
        add("ref_", self.ref_pose, pose_n)
        add("true_", self.pose, pose_n)
        add("true_", self.twist, ("vx_mps", "vy_mps", "wz_radps"))
        add("true_", self.accel, ("ax_mps2", "ay_mps2", "dwz_radps2"))
        add("ext_", self.f_ext, ("fx_N", "fy_N", "mz_Nm"))
        for c in range(self.contact_forces.shape[1]):
            add(f"contact{c}_", self.contact_forces[:, c, :], ("fx_N", "fy_N"))
        add("enc_", self.q_a_meas, ("qa0_rad", "qa1_rad", "qa2_rad"))
        add("gyro_", self.imu_omega, ("x_radps", "y_radps", "z_radps"))
        add("acc_", self.imu_accel, ("x_mps2", "y_mps2", "z_mps2"))
        add("fk_", self.pose_meas, pose_n)
        add("fk_", self.twist_meas, ("vx_mps", "vy_mps", "wz_radps"))
        add("ekf_", self.ekf, ("x_m", "y_m", "phi_rad", "vx_mps", "vy_mps", "wz_radps",
                               "ax_mps2", "ay_mps2", "dwz_radps2"))
        add("tau_", self.tau, ("0_Nm", "1_Nm", "2_Nm"))
        add("fm_", self.f_m, ("fx_N", "fy_N", "mz_Nm"))
        add("direct_", self.f_direct, ("fx_N", "fy_N", "mz_Nm"))
        for g, gain in enumerate(self.gains):
            add(f"mo{gain:g}_", self.f_mo[:, g, :], ("fx_N", "fy_N", "mz_Nm"))
        cols.append(("detect_direct", self.flag_direct.astype(float)))
        for g, gain in enumerate(self.gains):
            cols.append((f"detect_mo{gain:g}", self.flag_mo[:, g].astype(float)))
        return cols

    def to_csv(self, path):
        cols = self.columns()
        header = ",".join(h for h, _ in cols)
        data = np.column_stack([c for _, c in cols])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.12g")


def _crossed(f, thr):
    return abs(f[0]) > thr.force or abs(f[1]) > thr.force or abs(f[2]) > thr.moment


def run_scenario(setup: SimulationSetup) -> SimLog:
    """Simulate the closed loop along ``setup.trajectory``; deterministic given ``setup.seed``."""
    geo = setup.geometry
    traj = setup.trajectory
    T = traj.T
    if abs(T - setup.ekf.T) > 1e-15:
        raise ValueError("trajectory sampling time differs from the EKF sampling time")
    n = len(traj)
    gains = np.asarray(setup.mo_gains, dtype=float)
    G = gains.size
    rows = setup.scenario.contact_rows(traj, geo)
    nc = rows.shape[0]
    mount_true = setup.imu.mount
    mount_est = setup.estimator_mount or mount_true

    ss = np.random.SeedSequence(setup.seed)
    enc_rng, imu_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    imu = ImuSampler(setup.imu, imu_rng)

    out = {name: np.zeros((n, 3)) for name in (
        "pose", "twist", "accel", "f_ext", "q_a_meas", "imu_omega", "imu_accel", "pose_meas",
        "twist_meas", "tau", "f_m", "f_direct")}
    out["contact_forces"] = np.zeros((n, nc, 2))
    out["ekf"] = np.zeros((n, 9))
    out["f_mo"] = np.zeros((n, G, 3))
    flag_direct = np.zeros(n, dtype=bool)
    flag_mo = np.zeros((n, G), dtype=bool)

    pose = traj.pose[0].copy()
    twist = traj.twist[0].copy()
    tau_prev = np.zeros(3)
    zero3 = np.zeros(3)
    pose_est = pose.copy()
    qa_prev = None
    ekf = None
    mo = MomentumObserver(gains, T)
    ref_pose, ref_twist, ref_acc = traj.pose, traj.twist, traj.accel
    hold = None
    stop = setup.stop_on_detection
    stop_mo = int(stop.split(":")[1]) if stop.startswith("mo:") else None

    for k in range(n):
        # truth at t_k (acceleration just before the tick, torques of the previous tick)
        q_true, st, _ = K.ik(pose, geo.packed)
        _raise_status(st, f"tick {k}")
        acc, fext, st = K.plant_accel(pose, twist, tau_prev, zero3, geo.packed, setup.plant.packed, rows)
        _raise_status(st, f"tick {k}")
        if nc:
            J_true = K.jac_qx(q_true, pose, geo.packed)
            _, link = K.contact_wrench(q_true, pose, twist, geo.packed, J_true, rows)
            out["contact_forces"][k] = link
        out["pose"][k], out["twist"][k], out["accel"][k], out["f_ext"][k] = pose, twist, acc, fext

        # sensors
        qa = sample_encoders(q_true[0::3], setup.encoder, enc_rng)
        om, ac = imu_true_outputs(pose, twist, acc, mount_true)
        s = imu(om, ac, traj.t[k])
        out["q_a_meas"][k], out["imu_omega"][k], out["imu_accel"][k] = qa, s.omega, s.accel

        # forward + differential kinematics
        try:
            pose_est = forward_kinematics(qa, pose_est, geo).as_array()
        except (NoConvergence, Singular) as exc:
            raise SimulationError(f"forward kinematics failed at tick {k}: {exc}") from exc
        qd_a = zero3 if qa_prev is None else np.angle(np.exp(1j * (qa - qa_prev))) / T
        qa_prev = qa
        q_est, st, _ = K.ik(pose_est, geo.packed)
        if st != K.OK or K.is_singular(q_est, pose_est, geo.packed):
            raise SimulationError(f"measured pose unreachable or singular at tick {k}")
        twist_est = np.linalg.solve(K.active_rows(K.jac_qx(q_est, pose_est, geo.packed)), qd_a)
        terms = ModelTerms(pose_est, twist_est, geo, setup.model)
        out["pose_meas"][k], out["twist_meas"][k] = pose_est, twist_est

        # estimators
        y = np.concatenate([pose_est, s.omega, s.accel])
        if ekf is None:
            ekf = Ekf(setup.ekf, mount_est, np.concatenate([pose_est, zero3, zero3]))
        x_hat = ekf.step(y)
        out["ekf"][k] = x_hat
        f_m = terms.H.T @ tau_prev
        f_dir = direct_force(terms, x_hat[6:9], f_m)
        f_mo = mo.step(terms.M, terms.C, terms.g, terms.f_fr, twist_est, f_m)
        out["f_m"][k], out["f_direct"][k], out["f_mo"][k] = f_m, f_dir, f_mo
        if setup.direct_thresholds is not None:
            flag_direct[k] = _crossed(f_dir, setup.direct_thresholds)
        if setup.mo_thresholds is not None:
            for g in range(G):
                flag_mo[k, g] = _crossed(f_mo[g], setup.mo_thresholds[g])

        if hold is None and ((stop == "direct" and flag_direct[k]) or
                             (stop_mo is not None and flag_mo[k, stop_mo])):
            hold = pose_est.copy()

        # control
        if hold is None:
            rp, rt, ra = ref_pose[k], ref_twist[k], ref_acc[k]
        else:
            rp, rt, ra = hold, zero3, zero3
        tau, _ = setup.controller(rp, rt, ra, pose_est, twist_est, terms)
        out["tau"][k] = tau

        if k + 1 < n:
            pose, twist, st = K.rk4_tick(pose, twist, tau, zero3, geo.packed, setup.plant.packed, rows, T,
                                         setup.substeps)
            _raise_status(st, f"tick {k}")
        tau_prev = tau

    meta = {
        "name": setup.name,
        "kind": setup.scenario.kind,
        "seed": setup.seed,
        "mo_gains": tuple(float(g) for g in gains),
        "imu_bias_gyro": imu.bias[0],
        "imu_bias_accel": imu.bias[1],
    }
    return SimLog(t=traj.t.copy(), ref_pose=traj.pose.copy(), flag_direct=flag_direct, flag_mo=flag_mo,
                  meta=meta, **out)
