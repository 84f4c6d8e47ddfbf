"""Operational-space rigid-body dynamics of the planar 3-RRR machine.

    M_x xdd + c_x + g_x + F_fr,x = F_m,x + F_ext,x

M_x is assembled body by body (three link-1 bodies, three link-2 bodies and
the platform) from the body Jacobians, so C_x = sum_b J_b^T D_b Jdot_b and
C_x + C_x^T equals dM_x/dt exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .errors import Singular
from .kinematics import ContactLocation, RobotGeometry, _pose, _q, jacobian_q_x

Wrench = np.ndarray  # (fx [N], fy [N], mz [N m])


def _vec3(v):
    a = np.asarray(v, dtype=float)
    return np.full(3, float(a)) if a.ndim == 0 else a.reshape(3)


@dataclass(frozen=True, eq=False)
class DynamicsParams:
    link1_mass: np.ndarray
    link2_mass: np.ndarray
    link1_inertia: np.ndarray
    link2_inertia: np.ndarray
    platform_mass: float
    platform_inertia: float
    link1_com: np.ndarray = 0.5
    link2_com: np.ndarray = 0.5
    viscous: np.ndarray = 0.05
    coulomb: np.ndarray = 0.1
    coulomb_width: float = 1e-3
    gravity: tuple = (0.0, 0.0)
    torque_constant: float = 1.0
    packed: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("link1_mass", "link2_mass", "link1_inertia", "link2_inertia",
                     "link1_com", "link2_com", "viscous", "coulomb"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))
        for name in ("link1_mass", "link2_mass", "link1_inertia", "link2_inertia"):
            if not np.all(getattr(self, name) > 0):
                raise ValueError(f"{name} must be positive")
        if self.platform_mass <= 0 or self.platform_inertia <= 0:
            raise ValueError("platform mass and inertia must be positive")
        if np.any(self.viscous < 0) or np.any(self.coulomb < 0):
            raise ValueError("friction coefficients must be non-negative")
        if self.coulomb_width <= 0:
            raise ValueError("coulomb_width must be positive")
        if np.any((self.link1_com < 0) | (self.link1_com > 1) | (self.link2_com < 0) | (self.link2_com > 1)):
            raise ValueError("COM fractions must lie in [0, 1]")
        grav = np.asarray(self.gravity, dtype=float).reshape(2)
        object.__setattr__(self, "gravity", grav)
        packed = np.concatenate([
            self.link1_mass, self.link2_mass, self.link1_com, self.link2_com,
            self.link1_inertia, self.link2_inertia,
            [self.platform_mass, self.platform_inertia], self.viscous, self.coulomb,
            [self.coulomb_width], grav,
        ])
        object.__setattr__(self, "packed", packed)

    @classmethod
    def default(cls, geo: RobotGeometry, link_mass=0.5, platform_mass=1.2, platform_inertia=0.01, **kw):
        """Uniform rods of ``link_mass`` with m l^2 / 12 inertia about the COM."""
        l1 = geo.link_lengths[:, 0]
        l2 = geo.link_lengths[:, 1]
        return cls(
            link1_mass=np.full(3, link_mass), link2_mass=np.full(3, link_mass),
            link1_inertia=link_mass * l1 ** 2 / 12.0, link2_inertia=link_mass * l2 ** 2 / 12.0,
            platform_mass=platform_mass, platform_inertia=platform_inertia, **kw,
        )

    def perturbed(self, fraction):
        """Estimator-side copy: inertial terms scaled up, friction scaled down by ``fraction``."""
        up = 1.0 + fraction
        down = 1.0 - fraction
        return replace(
            self,
            link1_mass=self.link1_mass * up, link2_mass=self.link2_mass * up,
            link1_inertia=self.link1_inertia * up, link2_inertia=self.link2_inertia * up,
            platform_mass=self.platform_mass * up, platform_inertia=self.platform_inertia * up,
            viscous=self.viscous * down, coulomb=self.coulomb * down,
        )

    def with_gravity(self, g):
        return replace(self, gravity=tuple(g))


def _prep(q, pose, geo):
    q, pose = _q(q), _pose(pose)
    J = jacobian_q_x(q, pose, geo)
    return q, pose, J


def mass_matrix(q, pose, geo, params):
    q, pose, J = _prep(q, pose, geo)
    return K.mass_matrix(q, pose, geo.packed, params.packed, J)


def coriolis(q, pose, twist, geo, params):
    """Return ``(c_x, C_x)`` with ``c_x = C_x @ twist``."""
    q, pose, J = _prep(q, pose, geo)
    return K.coriolis(q, pose, geo.packed, params.packed, J, np.asarray(twist, dtype=float))


def coriolis_vector(q, pose, twist, geo, params):
    return coriolis(q, pose, twist, geo, params)[0]


def gravity_vector(q, pose, geo, params):
    q, pose, J = _prep(q, pose, geo)
    return K.gravity(q, pose, geo.packed, params.packed, J)


def friction_wrench(qd_a, q, pose, geo, params):
    """Viscous + smoothed Coulomb joint friction mapped to operational space."""
    q, pose, J = _prep(q, pose, geo)
    H = K.active_rows(J)
    tau = K.joint_friction(np.asarray(qd_a, dtype=float), params.packed)
    return H.T @ tau


def kinetic_energy(q, pose, twist, geo, params):
    twist = np.asarray(twist, dtype=float)
    return 0.5 * twist @ mass_matrix(q, pose, geo, params) @ twist


def potential_energy(q, pose, geo, params):
    return K.potential_energy(_q(q), _pose(pose), geo.packed, params.packed)


def inverse_dynamics(q, pose, twist, accel, f_ext, geo, params):
    """Motor wrench F_m,x that produces ``accel`` under ``f_ext``."""
    q, pose, J = _prep(q, pose, geo)
    twist = np.asarray(twist, dtype=float)
    M = K.mass_matrix(q, pose, geo.packed, params.packed, J)
    c = K.coriolis_vector(q, pose, geo.packed, params.packed, J, twist)
    g = K.gravity(q, pose, geo.packed, params.packed, J)
    ffr = K.friction(J, params.packed, twist)
    return M @ np.asarray(accel, dtype=float) + c + g + ffr - np.asarray(f_ext, dtype=float)


def forward_dynamics(q, pose, twist, f_m, f_ext, geo, params):
    """Platform acceleration from motor and external wrenches (Cholesky solve)."""
    q, pose, J = _prep(q, pose, geo)
    twist = np.asarray(twist, dtype=float)
    M = K.mass_matrix(q, pose, geo.packed, params.packed, J)
    c = K.coriolis_vector(q, pose, geo.packed, params.packed, J, twist)
    g = K.gravity(q, pose, geo.packed, params.packed, J)
    ffr = K.friction(J, params.packed, twist)
    rhs = np.asarray(f_m, dtype=float) + np.asarray(f_ext, dtype=float) - c - g - ffr
    L = np.linalg.cholesky(M)
    return np.linalg.solve(L.T, np.linalg.solve(L, rhs))


def motor_wrench(tau_m, q, pose, geo):
    """F_m,x = J_xqa^-T tau_m."""
    q, pose, J = _prep(q, pose, geo)
    return K.active_rows(J).T @ np.asarray(tau_m, dtype=float)


def motor_torques(f_m, q, pose, geo):
    """tau_m = J_xqa^T F_m,x."""
    q, pose, J = _prep(q, pose, geo)
    return np.linalg.solve(K.active_rows(J).T, np.asarray(f_m, dtype=float))


def project_link_force(f_link, q, pose, geo, loc: ContactLocation):
    """Platform wrench of a planar force (fx, fy) or wrench (fx, fy, mz) at ``loc``."""
    q, pose, J = _prep(q, pose, geo)
    P = K.point_jacobian(q, pose, geo.packed, J, *loc.kernel_args())
    f = np.zeros(3)
    f_link = np.asarray(f_link, dtype=float)
    f[: f_link.size] = f_link
    return P.T @ f


def project_clamping_forces(f1, f2, loc1, loc2, q, pose, geo):
    """Two-point (clamping) projection J_C1^T F1 + J_C2^T F2."""
    return project_link_force(f1, q, pose, geo, loc1) + project_link_force(f2, q, pose, geo, loc2)


class ModelTerms:
    """Equation-of-motion terms evaluated once at a (pose, twist)."""

    __slots__ = ("q", "J", "M", "c", "C", "g", "f_fr")

    def __init__(self, pose, twist, geo, params):
        q, J, M, c, C, g, ffr, status = K.model_terms(
            np.asarray(pose, dtype=float), np.asarray(twist, dtype=float), geo.packed, params.packed)
        if status != K.OK:
            raise Singular("model terms requested at an unreachable or singular pose")
        self.q, self.J, self.M, self.c, self.C, self.g, self.f_fr = q, J, M, c, C, g, ffr

    @property
    def H(self):
        """Inverse of J_xqa (rows of J_qx for the active joints)."""
        return K.active_rows(self.J)
