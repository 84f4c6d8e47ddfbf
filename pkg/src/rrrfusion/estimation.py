"""Kinematic-state EKF, generalized-momentum observer and the direct force method."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import _kernels as K
from .errors import InnovationCovarianceSingular
from .sensors import GRAVITY, ImuMount


@dataclass(frozen=True, eq=False)
class KinematicState:
    pose: np.ndarray
    twist: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        pose = np.asarray(self.pose, dtype=float).reshape(3).copy()
        pose[2] = K.wrap_angle(pose[2])
        object.__setattr__(self, "pose", pose)
        object.__setattr__(self, "twist", np.asarray(self.twist, dtype=float).reshape(3))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(3))

    def as_vector(self):
        return np.concatenate([self.pose, self.twist, self.accel])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6:9])


@dataclass(frozen=True, eq=False)
class EkfConfig:
    Q: np.ndarray
    R: np.ndarray
    P0: np.ndarray
    T: float = 1e-3

    def __post_init__(self):
        for name in ("Q", "R", "P0"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim == 1:
                m = np.diag(m)
            if m.shape != (9, 9):
                raise ValueError(f"{name} must be 9x9")
            if not np.all(np.diag(m) > 0):
                raise ValueError(f"{name} diagonal must be positive")
            object.__setattr__(self, name, m)
        if self.T <= 0:
            raise ValueError("T must be positive")

    @classmethod
    def default(cls, T=1e-3, pose_process_var=0.01):
        """Covariances tuned for the 1 kHz BMI160 / ECN1313 setup.

        ``pose_process_var`` is 0.01 by default; 0.1 gives nearly the same
        estimates because the pose measurement noise dominates.
        """
        R = np.concatenate([np.full(3, 1.2e-1), np.full(3, 1.6e-3), np.full(3, 7e-2)])
        Q = np.concatenate([np.full(3, pose_process_var), np.full(3, 1e1), np.full(3, 1e5)])
        return cls(Q=Q, R=R, P0=np.full(9, 0.1), T=T)

    def scaled(self, factor):
        return EkfConfig(self.Q * factor, self.R * factor, self.P0 * factor, self.T)


@dataclass(frozen=True, eq=False)
class EkfState:
    mean: KinematicState
    P: np.ndarray


def process_model(state: KinematicState, T):
    """Constant-acceleration prediction; returns (next state, transition matrix)."""
    A = K.transition_matrix(T)
    return KinematicState.from_vector(A @ state.as_vector()), A


def output_model(state: KinematicState, mount: ImuMount):
    """(pose, gyro, accel) outputs and their Jacobian."""
    return K.output_model(state.as_vector(), mount.position, mount.R_se, GRAVITY)


def ekf_step(ekf: EkfState, y, cfg: EkfConfig, mount: ImuMount) -> EkfState:
    x, P, _, status = K.ekf_step(ekf.mean.as_vector(), ekf.P, np.asarray(y, dtype=float), cfg.Q, cfg.R,
                                 cfg.T, mount.position, mount.R_se, GRAVITY)
    if status != K.OK:
        raise InnovationCovarianceSingular("C P C^T + R is not invertible")
    return EkfState(KinematicState.from_vector(x), P)


class Ekf:
    """Stateful wrapper that keeps the raw vectors between ticks."""

    def __init__(self, cfg: EkfConfig, mount: ImuMount, x0):
        self.cfg = cfg
        self.mount = mount
        self.R_se = mount.R_se
        self.x = np.asarray(x0, dtype=float).copy()
        self.P = cfg.P0.copy()
        self.K = None

    def step(self, y):
        x, P, Kg, status = K.ekf_step(self.x, self.P, y, self.cfg.Q, self.cfg.R, self.cfg.T,
                                      self.mount.position, self.R_se, GRAVITY)
        if status != K.OK:
            raise InnovationCovarianceSingular("C P C^T + R is not invertible")
        self.x, self.P, self.K = x, P, Kg
        return x

    @property
    def state(self):
        return EkfState(KinematicState.from_vector(self.x), self.P)


# ---------------------------------------------------------------- momentum observer


class MomentumObserver:
    """Generalized-momentum observer for one or several gain sets at once.

    ``gains`` is (G,) or (G, 3) in 1/s. The momentum integral is advanced with
    the trapezoidal rule, implicit in the force estimate, which keeps the
    discrete error pole at (1 - kT/2) / (1 + kT/2).
    """

    def __init__(self, gains, T):
        g = np.asarray(gains, dtype=float)
        if g.ndim == 0:
            g = g.reshape(1)
        if g.ndim == 1:
            g = np.repeat(g[:, None], 3, axis=1)
        if not np.all(g > 0):
            raise ValueError("observer gains must be positive")
        self.gains = g
        self.T = float(T)
        self.integral = None
        self.f_hat = np.zeros_like(g)
        self._u_prev = None

    def reset(self, momentum):
        self.integral = np.tile(np.asarray(momentum, dtype=float), (self.gains.shape[0], 1))
        self.f_hat = np.zeros_like(self.gains)
        self._u_prev = None

    def step(self, M, C, g, f_fr, twist, f_m):
        """Advance one tick with model terms at the current measured state."""
        twist = np.asarray(twist, dtype=float)
        p = M @ twist
        beta = g + f_fr - C.T @ twist
        u = np.asarray(f_m, dtype=float) - beta
        if self.integral is None:
            self.reset(p)
            self._u_prev = u
            return self.f_hat
        u_prev = u if self._u_prev is None else self._u_prev
        k, h = self.gains, 0.5 * self.T
        self.f_hat = k * (p - self.integral - h * (u_prev + self.f_hat + u)) / (1.0 + k * h)
        self.integral = p - self.f_hat / k
        self._u_prev = u
        return self.f_hat


@dataclass(eq=False)
class MoState:
    gains: np.ndarray
    integral: np.ndarray
    f_hat: np.ndarray


def momentum_observer_step(mo: MomentumObserver, terms, twist, f_m):
    """Functional-style alias of ``MomentumObserver.step`` using ``ModelTerms``."""
    return mo.step(terms.M, terms.C, terms.g, terms.f_fr, twist, f_m)


def direct_force(terms, accel_est, f_m):
    """External wrench from the equation of motion with an estimated acceleration.

    ``terms`` must be evaluated at the pose and twist from forward and
    differential kinematics, not at the EKF's pose and velocity.
    """
    return terms.M @ np.asarray(accel_est, dtype=float) + terms.c + terms.g + terms.f_fr - np.asarray(f_m, float)


# ---------------------------------------------------------------- observability


def observability_matrix(A, C):
    n = A.shape[0]
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def observability_rank(A, C):
    return int(np.linalg.matrix_rank(observability_matrix(A, C)))


def observability_check(state: KinematicState, mount: ImuMount, T, *, pose_only=False):
    """Kalman rank test of the linearised pair at ``state``. Returns (rank, observable)."""
    A = K.transition_matrix(T)
    _, C = output_model(state, mount)
    if pose_only:
        C = C.copy()
        C[3:, :] = 0.0
    r = observability_rank(A, C)
    return r, r == A.shape[0]


# ---------------------------------------------------------------- baseline


def numeric_accel(pose_series, T, cutoff_hz=20.0, order=2):
    """Double numerical differentiation followed by a causal Butterworth low-pass.

    ``pose_series`` is (N,) or (N, k); a 3-column input is treated as
    (x, y, phi) and the angle is unwrapped first.
    """
    x = np.asarray(pose_series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[1] == 3:
        x = np.column_stack([x[:, :2], np.unwrap(x[:, 2])])
    acc = np.gradient(np.gradient(x, T, axis=0), T, axis=0)
    b, a = signal.butter(order, cutoff_hz, fs=1.0 / T)
    zi = signal.lfilter_zi(b, a)[:, None] * acc[0]
    out, _ = signal.lfilter(b, a, acc, axis=0, zi=zi)
    return out
