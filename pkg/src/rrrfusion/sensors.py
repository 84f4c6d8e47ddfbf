"""Encoder and IMU measurement models, plus IMU mounting calibration.

Accelerometer convention: the sensor reports specific force, so a level,
static IMU reads ``(0, 0, +GRAVITY)``. This is the only place the sign is
fixed; every model in the package goes through ``imu_true_outputs``.
"""

from __future__ import annotations

import collections
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import DegenerateExcitation

log = logging.getLogger(__name__)

GRAVITY = 9.81
DEG = np.pi / 180.0

OMEGA_MIN_EXCITATION = 0.1  # rad/s
ACCEL_MIN_EXCITATION = 0.1  # m/s^2


@dataclass(frozen=True, eq=False)
class ImuMount:
    """IMU pose on the platform: position in E (m) and intrinsic xyz Euler angles (rad)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angles: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "angles", np.asarray(self.angles, dtype=float).reshape(3))

    @property
    def R_es(self):
        """Rotation taking S-frame coordinates to E."""
        return K.euler_xyz_matrix(self.angles)

    @property
    def R_se(self):
        return np.ascontiguousarray(self.R_es.T)

    @classmethod
    def from_mm_deg(cls, position_mm, angles_deg):
        return cls(np.asarray(position_mm, float) * 1e-3, np.asarray(angles_deg, float) * DEG)

    def as_vector(self):
        return np.concatenate([self.position, self.angles])


@dataclass(frozen=True)
class EncoderModel:
    noise_std_deg: float = 4e-4
    resolution_deg: float = 1.2e-5

    def __post_init__(self):
        if self.noise_std_deg < 0 or self.resolution_deg < 0:
            raise ValueError("encoder noise and resolution must be non-negative")


@dataclass(frozen=True)
class ImuModel:
    accel_noise_density: float = 180e-6  # g / sqrt(Hz)
    gyro_noise_density: float = 0.007  # deg/s / sqrt(Hz)
    accel_bias_range: float = 0.04  # g, bias drawn uniformly in +-range
    gyro_bias_range: float = 3.0  # deg/s
    accel_resolution: float = 2.99e-4  # m/s^2
    gyro_resolution: float = 1.91e-3  # deg/s
    delay: int = 3  # samples
    sample_rate: float = 1000.0  # Hz
    mount: ImuMount = field(default_factory=ImuMount)

    def __post_init__(self):
        for name in ("accel_noise_density", "gyro_noise_density", "accel_bias_range",
                     "gyro_bias_range", "accel_resolution", "gyro_resolution"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.delay < 0 or int(self.delay) != self.delay:
            raise ValueError("delay must be a non-negative integer")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def accel_std(self):
        """Per-sample white-noise std in m/s^2."""
        return self.accel_noise_density * GRAVITY * np.sqrt(self.sample_rate)

    @property
    def gyro_std(self):
        """Per-sample white-noise std in rad/s."""
        return self.gyro_noise_density * DEG * np.sqrt(self.sample_rate)

    def draw_bias(self, rng):
        """(gyro bias rad/s, accel bias m/s^2), uniform in the datasheet interval."""
        gyro = rng.uniform(-1.0, 1.0, 3) * self.gyro_bias_range * DEG
        accel = rng.uniform(-1.0, 1.0, 3) * self.accel_bias_range * GRAVITY
        return gyro, accel


@dataclass(frozen=True, eq=False)
class ImuSample:
    omega: np.ndarray
    accel: np.ndarray
    timestamp: float


def quantize(x, step):
    if step == 0:
        return np.asarray(x, dtype=float)
    return np.round(np.asarray(x, dtype=float) / step) * step


def imu_true_outputs(pose, twist, accel, mount: ImuMount):
    """Noise-free (omega_S, accel_S) of an IMU rigidly mounted on the platform."""
    state = np.concatenate([np.asarray(pose, float), np.asarray(twist, float), np.asarray(accel, float)])
    return K.imu_outputs(state, mount.position, mount.R_se, GRAVITY)


def sample_encoders(q_a_true, model: EncoderModel, rng):
    """Noisy, quantized active-joint angles in rad."""
    q = np.asarray(q_a_true, dtype=float)
    if model.noise_std_deg > 0:
        q = q + rng.normal(0.0, model.noise_std_deg * DEG, q.shape)
    return quantize(q, model.resolution_deg * DEG)


def sample_imu(omega, accel, timestamp, model: ImuModel, rng, bias, queue):
    """Corrupt one true sample and push it through the delay line.

    ``bias`` is ``(gyro_bias, accel_bias)``; ``queue`` is a deque holding the
    ``model.delay`` pending samples. Returns the sample leaving the line.
    """
    om = np.asarray(omega, dtype=float) + bias[0]
    ac = np.asarray(accel, dtype=float) + bias[1]
    if model.gyro_noise_density > 0:
        om = om + rng.normal(0.0, model.gyro_std, 3)
    if model.accel_noise_density > 0:
        ac = ac + rng.normal(0.0, model.accel_std, 3)
    om = quantize(om, model.gyro_resolution * DEG)
    ac = quantize(ac, model.accel_resolution)
    queue.append(ImuSample(om, ac, timestamp))
    return queue.popleft()


class ImuSampler:
    """Per-run IMU: bias drawn once, delay line seeded with the first reading."""

    def __init__(self, model: ImuModel, rng, bias=None):
        self.model = model
        self.rng = rng
        self.bias = model.draw_bias(rng) if bias is None else bias
        self.queue = None

    def __call__(self, omega, accel, timestamp):
        if self.queue is None:
            first = ImuSample(np.asarray(omega, float) + self.bias[0], np.asarray(accel, float) + self.bias[1],
                              timestamp)
            self.queue = collections.deque([first] * self.model.delay)
        return sample_imu(omega, accel, timestamp, self.model, self.rng, self.bias, self.queue)


# ---------------------------------------------------------------- calibration


@dataclass(frozen=True)
class PsoSettings:
    particles: int = 200
    iterations: int = 300
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    mount: ImuMount
    objective: float
    history: np.ndarray
    omega_max: float
    accel_max: float


def calibration_objective(mount: ImuMount, states, omega_meas, accel_meas, omega_max=None, accel_max=None):
    """Normalised sum of squared gyro and accelerometer residuals."""
    omega_meas = np.ascontiguousarray(omega_meas, dtype=float)
    accel_meas = np.ascontiguousarray(accel_meas, dtype=float)
    om = np.max(np.abs(omega_meas)) if omega_max is None else omega_max
    am = np.max(np.abs(accel_meas)) if accel_max is None else accel_max
    return float(K.calibration_objective(mount.as_vector(), np.ascontiguousarray(states, dtype=float),
                                         omega_meas, accel_meas, om, am, GRAVITY))


def default_bounds(center: ImuMount, position_halfwidth=0.2, angle_halfwidth_deg=10.0, fix_z=True):
    """Search box around a nominal mounting.

    With planar platform motion the sensor height never enters the outputs,
    so by default it is pinned to the nominal value.
    """
    c = center.as_vector()
    half = np.array([position_halfwidth] * 3 + [angle_halfwidth_deg * DEG] * 3)
    if fix_z:
        half[2] = 0.0
    return c - half, c + half


def calibrate_mounting(samples, truth_states, bounds, rng, settings: PsoSettings = PsoSettings()):
    """Identify the IMU mounting by particle-swarm minimisation of the
    normalised output error.

    ``samples`` is a sequence of ``ImuSample`` (or an ``(omega, accel)`` pair
    of (N, 3) arrays); ``truth_states`` is (N, 9) ``[pose, twist, accel]``.
    Parameters whose lower and upper bound coincide are held fixed.
    """
    if isinstance(samples, tuple):
        omega_meas, accel_meas = samples
    else:
        omega_meas = np.array([s.omega for s in samples])
        accel_meas = np.array([s.accel for s in samples])
    omega_meas = np.ascontiguousarray(omega_meas, dtype=float)
    accel_meas = np.ascontiguousarray(accel_meas, dtype=float)
    states = np.ascontiguousarray(truth_states, dtype=float)
    if states.shape[0] != omega_meas.shape[0]:
        raise ValueError("samples and truth states differ in length")

    omega_max = float(np.max(np.abs(omega_meas)))
    accel_max = float(np.max(np.abs(accel_meas)))
    if omega_max < OMEGA_MIN_EXCITATION or accel_max < ACCEL_MIN_EXCITATION:
        raise DegenerateExcitation(
            f"insufficient excitation: omega_max={omega_max:.3g} rad/s, a_max={accel_max:.3g} m/s^2")

    lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    span = hi - lo
    n, d = settings.particles, lo.size

    def cost(x):
        return K.calibration_objective_batch(x, states, omega_meas, accel_meas, omega_max, accel_max, GRAVITY)

    x = lo + rng.random((n, d)) * span
    v = (rng.random((n, d)) - 0.5) * 0.2 * span
    f = cost(x)
    best_x, best_f = x.copy(), f.copy()
    g = int(np.argmin(f))
    gx, gf = x[g].copy(), float(f[g])
    history = np.empty(settings.iterations)
    for it in range(settings.iterations):
        r1 = rng.random((n, d))
        r2 = rng.random((n, d))
        v = (settings.inertia * v + settings.cognitive * r1 * (best_x - x)
             + settings.social * r2 * (gx - x))
        v = np.clip(v, -span, span)
        x = x + v
        out = (x < lo) | (x > hi)
        x = np.clip(x, lo, hi)
        v[out] = 0.0
        f = cost(x)
        better = f < best_f
        best_x[better] = x[better]
        best_f[better] = f[better]
        g = int(np.argmin(best_f))
        if best_f[g] < gf:
            gf = float(best_f[g])
            gx = best_x[g].copy()
        history[it] = gf
    log.debug("PSO finished: objective %.6g", gf)
    return CalibrationResult(ImuMount(gx[:3], gx[3:]), gf, history, omega_max, accel_max)


def write_calibration(path, result: CalibrationResult, extra=None):
    """Small TOML file read back by ``read_calibration``."""
    m = result.mount
    lines = [
        "[mount]",
        "position_mm = [%s]" % ", ".join("%.6f" % v for v in m.position * 1e3),
        "angles_deg = [%s]" % ", ".join("%.6f" % v for v in m.angles / DEG),
        "",
        "[fit]",
        "objective = %.10g" % result.objective,
        "omega_max = %.10g" % result.omega_max,
        "accel_max = %.10g" % result.accel_max,
    ]
    for key, value in (extra or {}).items():
        lines.append("%s = %.10g" % (key, value))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_calibration(path) -> ImuMount:
    from ._toml import load_toml

    data = load_toml(path)
    return ImuMount.from_mm_deg(data["mount"]["position_mm"], data["mount"]["angles_deg"])
