import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rrrfusion import _kernels as K
from rrrfusion.errors import NoConvergence, Singular, Unreachable
from rrrfusion.kinematics import (ContactLocation, EePose, JointConfig, RobotGeometry, constraint_residual,
                                  contact_jacobian, contact_point, forward_kinematics, inverse_kinematics,
                                  jacobian_q_x, jacobian_x_qa, singularity_measure)

from conftest import random_poses

coord = st.floats(-0.08, 0.08)
angle = st.floats(-0.3, 0.3)


def _wrapdiff(a, b):
    return np.angle(np.exp(1j * (a - b)))


def fd_jac_qx(pose, geo, h=1e-6):
    J = np.empty((9, 3))
    for j in range(3):
        d = np.zeros(3)
        d[j] = h
        qp = inverse_kinematics(pose + d, geo).q
        qm = inverse_kinematics(pose - d, geo).q
        J[:, j] = _wrapdiff(qp, qm) / (2 * h)
    return J


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def test_home_pose_is_loop_closed(geo):
    q = inverse_kinematics(EePose(0, 0, 0), geo)
    assert np.max(np.abs(constraint_residual(q, np.zeros(3), geo))) < 1e-14


def test_home_pose_is_well_conditioned(geo):
    det, sin_min = singularity_measure(inverse_kinematics(np.zeros(3), geo), np.zeros(3), geo)
    assert abs(det) > 0.05 and sin_min > 0.4


def test_far_pose_is_unreachable(geo):
    with pytest.raises(Unreachable) as info:
        inverse_kinematics([0.5, 0.0, 0.0], geo)
    assert info.value.leg in (0, 1, 2)


def test_aligned_leg_links_are_singular(geo):
    pose = np.zeros(3)
    q = inverse_kinematics(pose, geo).q.copy()
    q[1] = q[0]  # leg 0 stretched: second link collinear with the first
    with pytest.raises(Singular):
        jacobian_q_x(q, pose, geo)


def test_near_stretched_workspace_boundary():
    geo = RobotGeometry.symmetric(base_radius=0.6 - 1e-9, platform_radius=0.1)
    _, sin_min = singularity_measure(inverse_kinematics(np.zeros(3), geo), np.zeros(3), geo)
    assert sin_min < 1e-3


def test_geometry_validation():
    with pytest.raises(ValueError):
        RobotGeometry.symmetric(l1=-0.1)
    with pytest.raises(ValueError):
        RobotGeometry.symmetric(branch=0)
    with pytest.raises(ValueError):
        RobotGeometry.symmetric(base_radius=2.0)


def test_pose_wraps_angle():
    assert EePose(0, 0, 3 * np.pi).phi == pytest.approx(np.pi)
    assert EePose(0, 0, -np.pi).phi == pytest.approx(np.pi)


def test_joint_config_active_part():
    q = JointConfig(np.arange(9.0))
    np.testing.assert_array_equal(q.q_a, [0, 3, 6])


@given(coord, coord, angle)
def test_ik_closes_every_loop(geo, x, y, phi):
    pose = np.array([x, y, phi])
    q = inverse_kinematics(pose, geo)
    assert np.max(np.abs(constraint_residual(q, pose, geo))) < 1e-12
    np.testing.assert_allclose(q.q[2::3], phi)


@given(coord, coord, angle, st.floats(-2e-3, 2e-3), st.floats(-2e-3, 2e-3), st.floats(-0.02, 0.02))
def test_ik_fk_round_trip(geo, x, y, phi, dx, dy, dphi):
    pose = np.array([x, y, phi])
    qa = inverse_kinematics(pose, geo).q_a
    est = forward_kinematics(qa, pose + [dx, dy, dphi], geo).as_array()
    assert np.max(np.abs(est - pose)) < 1e-10


def test_fk_exact_guess_needs_one_iteration(geo):
    pose = np.array([0.03, -0.02, 0.1])
    _, it = forward_kinematics(inverse_kinematics(pose, geo).q_a, pose, geo, full_output=True)
    assert it == 1


def test_fk_iteration_cap(geo):
    pose = np.array([0.03, -0.02, 0.1])
    qa = inverse_kinematics(pose, geo).q_a
    with pytest.raises(NoConvergence):
        forward_kinematics(qa, pose + [0.03, 0.03, 0.2], geo, max_iter=2)


@pytest.mark.parametrize("k", range(0, 100, 7))
def test_jac_qx_matches_finite_differences(k, geo):
    pose = random_poses(100, seed=11)[k]
    q = inverse_kinematics(pose, geo)
    assert rel_err(jacobian_q_x(q, pose, geo), fd_jac_qx(pose, geo)) < 1e-6


@given(coord, coord, angle)
def test_chain_identity(geo, x, y, phi):
    pose = np.array([x, y, phi])
    q = inverse_kinematics(pose, geo)
    J = jacobian_q_x(q, pose, geo)
    S = np.zeros((3, 9))
    S[[0, 1, 2], [0, 3, 6]] = 1.0
    np.testing.assert_allclose(S @ J @ jacobian_x_qa(q, pose, geo), np.eye(3), atol=1e-9)


@pytest.mark.parametrize("loc", [
    ContactLocation.platform(0.1, 0.0),
    ContactLocation.platform(-0.03, 0.07),
    ContactLocation(0, 1, 0.5),
    ContactLocation(1, 1, 1.0),
    ContactLocation(2, 2, 0.3),
    ContactLocation(1, 2, 0.0),
])
def test_contact_jacobian_matches_finite_differences(loc, geo):
    h = 1e-6
    for pose in random_poses(5, seed=3):
        q = inverse_kinematics(pose, geo)
        Jc = contact_jacobian(q, pose, geo, loc)
        fd = np.empty((3, 3))
        for j in range(3):
            d = np.zeros(3)
            d[j] = h
            pp = contact_point(inverse_kinematics(pose + d, geo), pose + d, geo, loc)
            pm = contact_point(inverse_kinematics(pose - d, geo), pose - d, geo, loc)
            diff = pp - pm
            diff[2] = _wrapdiff(pp[2], pm[2])
            fd[:, j] = diff / (2 * h)
        assert rel_err(Jc, fd) < 1e-6


def test_link_point_endpoints(geo):
    pose = np.array([0.02, 0.01, 0.1])
    q = inverse_kinematics(pose, geo)
    tip = contact_point(q, pose, geo, ContactLocation(0, 2, 1.0))
    anchor = contact_point(q, pose, geo, ContactLocation.platform(*geo.platform_anchors[0]))
    np.testing.assert_allclose(tip[:2], anchor[:2], atol=1e-12)
    base = contact_point(q, pose, geo, ContactLocation(0, 1, 0.0))
    np.testing.assert_allclose(base[:2], geo.base_anchors[0], atol=1e-12)


def test_second_order_terms_match_finite_differences(geo):
    # d/dt (J_qx(x) u) along x_dot = w equals the bilinear term with (u, w)
    pose = np.array([0.02, -0.03, 0.15])
    u = np.array([0.3, -0.2, 0.5])
    w = np.array([-0.1, 0.4, 0.2])
    h = 1e-6
    q = inverse_kinematics(pose, geo).q
    qd_u = K.joint_rates(q, pose, geo.packed, u)
    qd_w = K.joint_rates(q, pose, geo.packed, w)
    bil = K.joint_bilinear(q, pose, geo.packed, qd_u, qd_w, u, w)
    Jp = jacobian_q_x(inverse_kinematics(pose + h * w, geo), pose + h * w, geo)
    Jm = jacobian_q_x(inverse_kinematics(pose - h * w, geo), pose - h * w, geo)
    np.testing.assert_allclose(bil, (Jp - Jm) @ u / (2 * h), atol=1e-6)
