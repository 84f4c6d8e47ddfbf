"""Planar 3-RRR geometry, loop closure, forward/inverse kinematics and Jacobians.

Joint angles are absolute (measured from the x axis of frame 0). Per leg the
stacked joint vector holds ``(alpha, beta, phi)``: link-1 angle (actuated),
link-2 angle and the platform angle carried by the third joint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import NoConvergence, Singular, Unreachable

FK_MAX_ITER = 20
FK_TOL = 1e-12


def _circle(radius, angles_deg):
    a = np.deg2rad(angles_deg)
    return np.column_stack([radius * np.cos(a), radius * np.sin(a)])


@dataclass(frozen=True, eq=False)
class RobotGeometry:
    base_anchors: np.ndarray
    platform_anchors: np.ndarray
    link_lengths: np.ndarray
    elbow_branch: np.ndarray
    packed: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        base = np.asarray(self.base_anchors, dtype=float).reshape(3, 2)
        plat = np.asarray(self.platform_anchors, dtype=float).reshape(3, 2)
        lengths = np.asarray(self.link_lengths, dtype=float).reshape(3, 2)
        branch = np.asarray(self.elbow_branch, dtype=float).reshape(3)
        if not np.all(lengths > 0):
            raise ValueError("link lengths must be strictly positive")
        if not np.all(np.isin(branch, (-1.0, 1.0))):
            raise ValueError("elbow_branch entries must be +1 or -1")
        for name, pts in (("base_anchors", base), ("platform_anchors", plat)):
            for i in range(3):
                for j in range(i + 1, 3):
                    if np.allclose(pts[i], pts[j]):
                        raise ValueError(f"{name} {i} and {j} coincide")
        object.__setattr__(self, "base_anchors", base)
        object.__setattr__(self, "platform_anchors", plat)
        object.__setattr__(self, "link_lengths", lengths)
        object.__setattr__(self, "elbow_branch", branch)
        packed = np.concatenate([base.ravel(), plat.ravel(), lengths[:, 0], lengths[:, 1], branch])
        object.__setattr__(self, "packed", packed)
        _, status, leg = K.ik(np.zeros(3), packed)
        if status != K.OK:
            raise ValueError(f"home pose (0, 0, 0) is not reachable by leg {leg}")

    @classmethod
    def symmetric(cls, base_radius=0.4, platform_radius=0.1, l1=0.25, l2=0.25, branch=1):
        """Equilateral machine with anchors at 90, 210 and 330 deg."""
        angles = [90.0, 210.0, 330.0]
        return cls(
            base_anchors=_circle(base_radius, angles),
            platform_anchors=_circle(platform_radius, angles),
            link_lengths=np.tile([l1, l2], (3, 1)),
            elbow_branch=np.full(3, branch),
        )


@dataclass(frozen=True)
class EePose:
    x: float
    y: float
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "phi", float(K.wrap_angle(float(self.phi))))

    def as_array(self):
        return np.array([self.x, self.y, self.phi])

    @classmethod
    def from_array(cls, a):
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True, eq=False)
class JointConfig:
    q: np.ndarray

    @property
    def q_a(self):
        return self.q[0::3].copy()

    def relative(self):
        """Relative joint angles per leg (alpha, beta - alpha, phi - beta)."""
        r = self.q.reshape(3, 3).copy()
        r[:, 2] = r[:, 2] - r[:, 1]
        r[:, 1] = r[:, 1] - self.q.reshape(3, 3)[:, 0]
        return r.ravel()


@dataclass(frozen=True)
class ContactLocation:
    """A material point on the machine.

    ``link`` 1 or 2 selects a leg link and ``s`` the fraction along it from
    its proximal joint. ``link`` 0 means the platform, with ``offset`` the
    point in the end-effector frame.
    """

    leg: int = 0
    link: int = 0
    s: float = 0.0
    offset: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.link not in (0, 1, 2):
            raise ValueError("link must be 0 (platform), 1 or 2")
        if self.link and not 0 <= self.leg <= 2:
            raise ValueError("leg must be 0..2")
        if not 0.0 <= self.s <= 1.0:
            raise ValueError("s must lie in [0, 1]")

    @classmethod
    def platform(cls, ox=0.0, oy=0.0):
        return cls(0, 0, 0.0, (float(ox), float(oy)))

    @property
    def is_platform(self):
        return self.link == 0

    def kernel_args(self):
        return self.link, self.leg, float(self.s), float(self.offset[0]), float(self.offset[1])


def _pose(p):
    if isinstance(p, EePose):
        return p.as_array()
    return np.asarray(p, dtype=float)


def _q(q):
    if isinstance(q, JointConfig):
        return q.q
    return np.asarray(q, dtype=float)


def inverse_kinematics(pose, geo: RobotGeometry) -> JointConfig:
    q, status, leg = K.ik(_pose(pose), geo.packed)
    if status != K.OK:
        raise Unreachable(int(leg))
    return JointConfig(q)


def constraint_residual(q, pose, geo: RobotGeometry):
    """Six loop-closure errors in metres, two per leg."""
    return K.loop_residual(_q(q), _pose(pose), geo.packed)


def singularity_measure(q, pose, geo: RobotGeometry):
    """(det of pose constraint gradient, min |sin(beta - alpha)|)."""
    A, sd = K.constraint_gradient(_q(q), _pose(pose), geo.packed)
    return float(np.linalg.det(A)), float(np.min(np.abs(sd)))


def _check(q, pose, geo):
    if K.is_singular(q, pose, geo.packed):
        raise Singular("pose is (numerically) singular")


def forward_kinematics(q_a, guess, geo: RobotGeometry, *, max_iter=FK_MAX_ITER, tol=FK_TOL,
                       full_output=False):
    """Newton-Raphson forward kinematics warm-started at ``guess``.

    With ``full_output`` returns ``(pose, iterations)``.
    """
    x, it, status = K.fk_newton(np.asarray(q_a, dtype=float), _pose(guess), geo.packed, max_iter, tol)
    if status == K.SINGULAR:
        raise Singular("iteration matrix singular in forward kinematics")
    if status != K.OK:
        raise NoConvergence(f"forward kinematics did not converge in {max_iter} iterations")
    pose = EePose.from_array(x)
    return (pose, int(it)) if full_output else pose


def jacobian_q_x(q, pose, geo: RobotGeometry):
    """9x3 map qdot = J_qx xdot."""
    q, pose = _q(q), _pose(pose)
    _check(q, pose, geo)
    return K.jac_qx(q, pose, geo.packed)


def jacobian_x_qa(q, pose, geo: RobotGeometry):
    """3x3 map xdot = J_xqa qdot_a."""
    return np.linalg.inv(K.active_rows(jacobian_q_x(q, pose, geo)))


def contact_point(q, pose, geo: RobotGeometry, loc: ContactLocation):
    """(x, y, angle) of the located material point."""
    return K.point_position(_q(q), _pose(pose), geo.packed, *loc.kernel_args())


def contact_jacobian(q, pose, geo: RobotGeometry, loc: ContactLocation):
    """3x3 map from platform twist to the point's (vx, vy, omega)."""
    q, pose = _q(q), _pose(pose)
    J = jacobian_q_x(q, pose, geo)
    return K.point_jacobian(q, pose, geo.packed, J, *loc.kernel_args())
