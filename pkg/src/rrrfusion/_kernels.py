"""Hot numeric kernels for the planar 3-RRR machine.

Everything here works on packed float arrays so the same code runs under
``numba.njit`` and as plain numpy (see ``_jit``). Kernels report failures via
integer status codes; the public modules turn those into exceptions.

Packed geometry ``geo`` (21,):
    base anchors (3x2), platform anchors in E frame (3x2), l1 (3), l2 (3),
    elbow branch (3, +-1).
Packed dynamics ``dyn`` (29,):
    m1 (3), m2 (3), COM fraction link 1 (3), link 2 (3), I1 (3), I2 (3),
    platform mass, platform inertia, viscous (3), Coulomb (3), tanh width,
    in-plane gravity (2).

Joint vector ``q`` (9,) holds absolute angles per leg: (alpha, beta, phi).
"""

import numpy as np

from ._jit import njit

OK = 0
UNREACHABLE = 1
SINGULAR = 2
NO_CONVERGENCE = 3

SINGULAR_TOL = 1e-9

G_BASE = 0
G_PLAT = 6
G_L1 = 12
G_L2 = 15
G_BRANCH = 18
GEO_SIZE = 21

D_M1 = 0
D_M2 = 3
D_S1 = 6
D_S2 = 9
D_I1 = 12
D_I2 = 15
D_MP = 18
D_IP = 19
D_MUV = 20
D_MUC = 23
D_EPS = 26
D_GRAV = 27
DYN_SIZE = 29

# contact rows: kind, leg, s, ox, oy, wall_x, wall_y, n_x, n_y, stiffness, damping
CONTACT_SIZE = 11

KIND_PLATFORM = 0
KIND_LINK1 = 1
KIND_LINK2 = 2


@njit
def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.arctan2(np.sin(a), np.cos(a))
    if w <= -np.pi:
        w += 2.0 * np.pi
    return w


@njit
def platform_anchors(pose, geo):
    """World positions R(phi) c_i + p and their phi-derivatives E R c_i."""
    c = np.cos(pose[2])
    s = np.sin(pose[2])
    rc = np.empty((3, 2))
    erc = np.empty((3, 2))
    for i in range(3):
        cx = geo[G_PLAT + 2 * i]
        cy = geo[G_PLAT + 2 * i + 1]
        rc[i, 0] = c * cx - s * cy
        rc[i, 1] = s * cx + c * cy
        erc[i, 0] = -rc[i, 1]
        erc[i, 1] = rc[i, 0]
    return rc, erc


@njit
def ik(pose, geo):
    """Analytic two-link solution per leg. Returns (q, status, leg)."""
    q = np.zeros(9)
    rc, _ = platform_anchors(pose, geo)
    for i in range(3):
        ax = geo[G_BASE + 2 * i]
        ay = geo[G_BASE + 2 * i + 1]
        l1 = geo[G_L1 + i]
        l2 = geo[G_L2 + i]
        dx = pose[0] + rc[i, 0] - ax
        dy = pose[1] + rc[i, 1] - ay
        r = np.sqrt(dx * dx + dy * dy)
        if r == 0.0:
            return q, UNREACHABLE, i
        cos_t = (l1 * l1 + r * r - l2 * l2) / (2.0 * l1 * r)
        if cos_t > 1.0 or cos_t < -1.0:
            return q, UNREACHABLE, i
        alpha = np.arctan2(dy, dx) + geo[G_BRANCH + i] * np.arccos(cos_t)
        bx = ax + l1 * np.cos(alpha)
        by = ay + l1 * np.sin(alpha)
        beta = np.arctan2(pose[1] + rc[i, 1] - by, pose[0] + rc[i, 0] - bx)
        q[3 * i] = wrap_angle(alpha)
        q[3 * i + 1] = beta
        q[3 * i + 2] = pose[2]
    return q, OK, -1


@njit
def loop_residual(q, pose, geo):
    """Per-leg 2D closure error: A + l1 e(alpha) + l2 e(beta) - C."""
    rc, _ = platform_anchors(pose, geo)
    res = np.empty(6)
    for i in range(3):
        a = q[3 * i]
        b = q[3 * i + 1]
        res[2 * i] = (geo[G_BASE + 2 * i] + geo[G_L1 + i] * np.cos(a)
                      + geo[G_L2 + i] * np.cos(b) - pose[0] - rc[i, 0])
        res[2 * i + 1] = (geo[G_BASE + 2 * i + 1] + geo[G_L1 + i] * np.sin(a)
                          + geo[G_L2 + i] * np.sin(b) - pose[1] - rc[i, 1])
    return res


@njit
def constraint_gradient(q, pose, geo):
    """Rows [e2, e2 . E R c] of the pose-space constraint gradient, and sin(beta - alpha)."""
    _, erc = platform_anchors(pose, geo)
    A = np.empty((3, 3))
    sd = np.empty(3)
    for i in range(3):
        a = q[3 * i]
        b = q[3 * i + 1]
        e2x = np.cos(b)
        e2y = np.sin(b)
        A[i, 0] = e2x
        A[i, 1] = e2y
        A[i, 2] = e2x * erc[i, 0] + e2y * erc[i, 1]
        sd[i] = np.sin(b - a)
    return A, sd


@njit
def is_singular(q, pose, geo):
    A, sd = constraint_gradient(q, pose, geo)
    if abs(np.linalg.det(A)) < SINGULAR_TOL:
        return True
    for i in range(3):
        if abs(sd[i]) < SINGULAR_TOL:
            return True
    return False


@njit
def joint_rates(q, pose, geo, u):
    """qdot for platform twist u (no singularity check)."""
    _, erc = platform_anchors(pose, geo)
    qd = np.empty(9)
    for i in range(3):
        a = q[3 * i]
        b = q[3 * i + 1]
        sd = np.sin(b - a)
        vx = u[0] + u[2] * erc[i, 0]
        vy = u[1] + u[2] * erc[i, 1]
        qd[3 * i] = (vx * np.cos(b) + vy * np.sin(b)) / (geo[G_L1 + i] * sd)
        qd[3 * i + 1] = -(vx * np.cos(a) + vy * np.sin(a)) / (geo[G_L2 + i] * sd)
        qd[3 * i + 2] = u[2]
    return qd


@njit
def joint_bilinear(q, pose, geo, qd_u, qd_w, u, w):
    """Velocity-product part of qddot, symmetric bilinear in (u, w)."""
    rc, _ = platform_anchors(pose, geo)
    out = np.empty(9)
    pp = u[2] * w[2]
    for i in range(3):
        a = q[3 * i]
        b = q[3 * i + 1]
        sd = np.sin(b - a)
        l1 = geo[G_L1 + i]
        l2 = geo[G_L2 + i]
        aa = qd_u[3 * i] * qd_w[3 * i]
        bb = qd_u[3 * i + 1] * qd_w[3 * i + 1]
        rx = -pp * rc[i, 0] + l1 * np.cos(a) * aa + l2 * np.cos(b) * bb
        ry = -pp * rc[i, 1] + l1 * np.sin(a) * aa + l2 * np.sin(b) * bb
        out[3 * i] = (rx * np.cos(b) + ry * np.sin(b)) / (l1 * sd)
        out[3 * i + 1] = -(rx * np.cos(a) + ry * np.sin(a)) / (l2 * sd)
        out[3 * i + 2] = 0.0
    return out


@njit
def jac_qx(q, pose, geo):
    J = np.empty((9, 3))
    for j in range(3):
        u = np.zeros(3)
        u[j] = 1.0
        J[:, j] = joint_rates(q, pose, geo, u)
    return J


@njit
def active_rows(J):
    H = np.empty((3, 3))
    for i in range(3):
        H[i, :] = J[3 * i, :]
    return H


@njit
def point_position(q, pose, geo, kind, leg, s, ox, oy):
    """(x, y, angle) of a material point on the platform, link 1 or link 2."""
    out = np.empty(3)
    if kind == KIND_PLATFORM:
        c = np.cos(pose[2])
        sn = np.sin(pose[2])
        out[0] = pose[0] + c * ox - sn * oy
        out[1] = pose[1] + sn * ox + c * oy
        out[2] = pose[2]
        return out
    a = q[3 * leg]
    b = q[3 * leg + 1]
    l1 = geo[G_L1 + leg]
    l2 = geo[G_L2 + leg]
    ax = geo[G_BASE + 2 * leg]
    ay = geo[G_BASE + 2 * leg + 1]
    if kind == KIND_LINK1:
        out[0] = ax + s * l1 * np.cos(a)
        out[1] = ay + s * l1 * np.sin(a)
        out[2] = a
    else:
        out[0] = ax + l1 * np.cos(a) + s * l2 * np.cos(b)
        out[1] = ay + l1 * np.sin(a) + s * l2 * np.sin(b)
        out[2] = b
    return out


@njit
def point_jacobian(q, pose, geo, J, kind, leg, s, ox, oy):
    """3x3 map from platform twist to (vx, vy, omega) of a material point."""
    P = np.zeros((3, 3))
    if kind == KIND_PLATFORM:
        c = np.cos(pose[2])
        sn = np.sin(pose[2])
        P[0, 0] = 1.0
        P[1, 1] = 1.0
        P[0, 2] = -(sn * ox + c * oy)
        P[1, 2] = c * ox - sn * oy
        P[2, 2] = 1.0
        return P
    a = q[3 * leg]
    b = q[3 * leg + 1]
    l1 = geo[G_L1 + leg]
    l2 = geo[G_L2 + leg]
    ja = J[3 * leg, :]
    jb = J[3 * leg + 1, :]
    if kind == KIND_LINK1:
        for j in range(3):
            P[0, j] = -s * l1 * np.sin(a) * ja[j]
            P[1, j] = s * l1 * np.cos(a) * ja[j]
            P[2, j] = ja[j]
    else:
        for j in range(3):
            P[0, j] = -l1 * np.sin(a) * ja[j] - s * l2 * np.sin(b) * jb[j]
            P[1, j] = l1 * np.cos(a) * ja[j] + s * l2 * np.cos(b) * jb[j]
            P[2, j] = jb[j]
    return P


@njit
def point_bilinear(q, pose, geo, qd_u, qd_w, qdd_uw, u, w, kind, leg, s, ox, oy):
    """Velocity-product acceleration of a material point, bilinear in (u, w)."""
    out = np.zeros(3)
    if kind == KIND_PLATFORM:
        c = np.cos(pose[2])
        sn = np.sin(pose[2])
        pp = u[2] * w[2]
        out[0] = -pp * (c * ox - sn * oy)
        out[1] = -pp * (sn * ox + c * oy)
        return out
    a = q[3 * leg]
    b = q[3 * leg + 1]
    l1 = geo[G_L1 + leg]
    l2 = geo[G_L2 + leg]
    aa = qd_u[3 * leg] * qd_w[3 * leg]
    bb = qd_u[3 * leg + 1] * qd_w[3 * leg + 1]
    add = qdd_uw[3 * leg]
    bdd = qdd_uw[3 * leg + 1]
    if kind == KIND_LINK1:
        out[0] = s * l1 * (-np.sin(a) * add - np.cos(a) * aa)
        out[1] = s * l1 * (np.cos(a) * add - np.sin(a) * aa)
        out[2] = add
    else:
        out[0] = l1 * (-np.sin(a) * add - np.cos(a) * aa) + s * l2 * (-np.sin(b) * bdd - np.cos(b) * bb)
        out[1] = l1 * (np.cos(a) * add - np.sin(a) * aa) + s * l2 * (np.cos(b) * bdd - np.sin(b) * bb)
        out[2] = bdd
    return out


@njit
def _body(dyn, b):
    """(kind, leg, s, mass, inertia) of body b in 0..6 (links 1, links 2, platform)."""
    if b < 3:
        return KIND_LINK1, b, dyn[D_S1 + b], dyn[D_M1 + b], dyn[D_I1 + b]
    if b < 6:
        i = b - 3
        return KIND_LINK2, i, dyn[D_S2 + i], dyn[D_M2 + i], dyn[D_I2 + i]
    return KIND_PLATFORM, 0, 0.0, dyn[D_MP], dyn[D_IP]


@njit
def mass_matrix(q, pose, geo, dyn, J):
    M = np.zeros((3, 3))
    for b in range(7):
        kind, leg, s, m, inertia = _body(dyn, b)
        P = point_jacobian(q, pose, geo, J, kind, leg, s, 0.0, 0.0)
        for r in range(3):
            for c in range(3):
                M[r, c] += m * (P[0, r] * P[0, c] + P[1, r] * P[1, c]) + inertia * P[2, r] * P[2, c]
    return M


@njit
def coriolis(q, pose, geo, dyn, J, twist):
    """Return (c_x, C_x) with c_x = C_x twist and C_x + C_x^T = dM/dt."""
    cvec = np.zeros(3)
    Cmat = np.zeros((3, 3))
    qd = joint_rates(q, pose, geo, twist)
    qdd = joint_bilinear(q, pose, geo, qd, qd, twist, twist)
    unit_rates = np.empty((3, 9))
    unit_bil = np.empty((3, 9))
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        unit_rates[j, :] = J[:, j]
        unit_bil[j, :] = joint_bilinear(q, pose, geo, qd, J[:, j], twist, e)
    for b in range(7):
        kind, leg, s, m, inertia = _body(dyn, b)
        P = point_jacobian(q, pose, geo, J, kind, leg, s, 0.0, 0.0)
        acc = point_bilinear(q, pose, geo, qd, qd, qdd, twist, twist, kind, leg, s, 0.0, 0.0)
        Pdot = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = 1.0
            Pdot[:, j] = point_bilinear(q, pose, geo, qd, unit_rates[j], unit_bil[j], twist, e,
                                        kind, leg, s, 0.0, 0.0)
        for r in range(3):
            cvec[r] += m * (P[0, r] * acc[0] + P[1, r] * acc[1]) + inertia * P[2, r] * acc[2]
            for c in range(3):
                Cmat[r, c] += m * (P[0, r] * Pdot[0, c] + P[1, r] * Pdot[1, c]) + inertia * P[2, r] * Pdot[2, c]
    return cvec, Cmat


@njit
def coriolis_vector(q, pose, geo, dyn, J, twist):
    cvec = np.zeros(3)
    qd = joint_rates(q, pose, geo, twist)
    qdd = joint_bilinear(q, pose, geo, qd, qd, twist, twist)
    for b in range(7):
        kind, leg, s, m, inertia = _body(dyn, b)
        P = point_jacobian(q, pose, geo, J, kind, leg, s, 0.0, 0.0)
        acc = point_bilinear(q, pose, geo, qd, qd, qdd, twist, twist, kind, leg, s, 0.0, 0.0)
        for r in range(3):
            cvec[r] += m * (P[0, r] * acc[0] + P[1, r] * acc[1]) + inertia * P[2, r] * acc[2]
    return cvec


@njit
def gravity(q, pose, geo, dyn, J):
    g = np.zeros(3)
    gx = dyn[D_GRAV]
    gy = dyn[D_GRAV + 1]
    if gx == 0.0 and gy == 0.0:
        return g
    for b in range(7):
        kind, leg, s, m, _ = _body(dyn, b)
        P = point_jacobian(q, pose, geo, J, kind, leg, s, 0.0, 0.0)
        for r in range(3):
            g[r] -= m * (P[0, r] * gx + P[1, r] * gy)
    return g


@njit
def potential_energy(q, pose, geo, dyn):
    V = 0.0
    gx = dyn[D_GRAV]
    gy = dyn[D_GRAV + 1]
    for b in range(7):
        kind, leg, s, m, _ = _body(dyn, b)
        p = point_position(q, pose, geo, kind, leg, s, 0.0, 0.0)
        V -= m * (gx * p[0] + gy * p[1])
    return V


@njit
def joint_friction(qd_a, dyn):
    tau = np.empty(3)
    eps = dyn[D_EPS]
    for i in range(3):
        tau[i] = dyn[D_MUV + i] * qd_a[i] + dyn[D_MUC + i] * np.tanh(qd_a[i] / eps)
    return tau


@njit
def friction(J, dyn, twist):
    H = active_rows(J)
    tau = joint_friction(H @ twist, dyn)
    return H.T @ tau


@njit
def contact_wrench(q, pose, twist, geo, J, contacts):
    """Penalty contact forces. Returns (platform wrench, per-contact (fx, fy))."""
    n = contacts.shape[0]
    F = np.zeros(3)
    link = np.zeros((n, 2))
    for k in range(n):
        row = contacts[k]
        kind = int(row[0])
        leg = int(row[1])
        P = point_jacobian(q, pose, geo, J, kind, leg, row[2], row[3], row[4])
        x = point_position(q, pose, geo, kind, leg, row[2], row[3], row[4])
        v = P @ twist
        pen = (row[5] - x[0]) * row[7] + (row[6] - x[1]) * row[8]
        if pen <= 0.0:
            continue
        pen_rate = -(v[0] * row[7] + v[1] * row[8])
        mag = row[9] * pen + row[10] * pen_rate
        if mag <= 0.0:
            continue
        fx = mag * row[7]
        fy = mag * row[8]
        link[k, 0] = fx
        link[k, 1] = fy
        for r in range(3):
            F[r] += P[0, r] * fx + P[1, r] * fy
    return F, link


@njit
def plant_accel(pose, twist, tau_m, fext_const, geo, dyn, contacts):
    """Forward dynamics with joint torques, a constant external wrench and penalty
    contacts. Returns (acc, contact wrench, status)."""
    acc = np.zeros(3)
    q, st, _ = ik(pose, geo)
    if st != OK:
        return acc, np.zeros(3), st
    if is_singular(q, pose, geo):
        return acc, np.zeros(3), SINGULAR
    J = jac_qx(q, pose, geo)
    H = active_rows(J)
    M = mass_matrix(q, pose, geo, dyn, J)
    c = coriolis_vector(q, pose, geo, dyn, J, twist)
    g = gravity(q, pose, geo, dyn, J)
    ffr = H.T @ joint_friction(H @ twist, dyn)
    fext, _ = contact_wrench(q, pose, twist, geo, J, contacts)
    rhs = H.T @ tau_m + fext_const + fext - c - g - ffr
    L = np.linalg.cholesky(M)
    z = np.linalg.solve(L, rhs)
    acc = np.linalg.solve(L.T, z)
    return acc, fext, OK


@njit
def rk4_tick(pose, twist, tau_m, fext_const, geo, dyn, contacts, dt, substeps):
    """Advance the plant one control tick of length dt with torques held."""
    h = dt / substeps
    x = pose.copy()
    v = twist.copy()
    for _ in range(substeps):
        a1, _, s1 = plant_accel(x, v, tau_m, fext_const, geo, dyn, contacts)
        if s1 != OK:
            return x, v, s1
        a2, _, s2 = plant_accel(x + 0.5 * h * v, v + 0.5 * h * a1, tau_m, fext_const, geo, dyn, contacts)
        if s2 != OK:
            return x, v, s2
        a3, _, s3 = plant_accel(x + 0.5 * h * (v + 0.5 * h * a1), v + 0.5 * h * a2, tau_m, fext_const, geo, dyn, contacts)
        if s3 != OK:
            return x, v, s3
        a4, _, s4 = plant_accel(x + h * (v + 0.5 * h * a2), v + h * a3, tau_m, fext_const, geo, dyn, contacts)
        if s4 != OK:
            return x, v, s4
        x = x + h * v + h * h / 6.0 * (a1 + a2 + a3)
        v = v + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    x[2] = wrap_angle(x[2])
    return x, v, OK


@njit
def fk_newton(qa, guess, geo, max_iter, tol):
    """Newton-Raphson on the active-joint closure. Returns (pose, iterations, status)."""
    x = guess.copy()
    for it in range(1, max_iter + 1):
        rc, erc = platform_anchors(x, geo)
        res = np.empty(3)
        grad = np.empty((3, 3))
        worst = 0.0
        for i in range(3):
            l1 = geo[G_L1 + i]
            bx = geo[G_BASE + 2 * i] + l1 * np.cos(qa[i])
            by = geo[G_BASE + 2 * i + 1] + l1 * np.sin(qa[i])
            ux = x[0] + rc[i, 0] - bx
            uy = x[1] + rc[i, 1] - by
            l2 = geo[G_L2 + i]
            # half squared-length residual has units m after division by l2
            res[i] = 0.5 * (ux * ux + uy * uy - l2 * l2) / l2
            grad[i, 0] = ux / l2
            grad[i, 1] = uy / l2
            grad[i, 2] = (ux * erc[i, 0] + uy * erc[i, 1]) / l2
            if abs(res[i]) > worst:
                worst = abs(res[i])
        if abs(np.linalg.det(grad)) < SINGULAR_TOL:
            return x, it, SINGULAR
        if worst < tol:
            return x, it, OK
        x = x - np.linalg.solve(grad, res)
    return x, max_iter, NO_CONVERGENCE


# ---------------------------------------------------------------- IMU model


@njit
def euler_xyz_matrix(angles):
    """Intrinsic x-y'-z'' rotation Rx(a) Ry(b) Rz(c)."""
    ca, sa = np.cos(angles[0]), np.sin(angles[0])
    cb, sb = np.cos(angles[1]), np.sin(angles[1])
    cc, sc = np.cos(angles[2]), np.sin(angles[2])
    R = np.empty((3, 3))
    R[0, 0] = cb * cc
    R[0, 1] = -cb * sc
    R[0, 2] = sb
    R[1, 0] = ca * sc + sa * sb * cc
    R[1, 1] = ca * cc - sa * sb * sc
    R[1, 2] = -sa * cb
    R[2, 0] = sa * sc - ca * sb * cc
    R[2, 1] = sa * cc + ca * sb * sc
    R[2, 2] = ca * cb
    return R


@njit
def imu_outputs(state, mount_p, R_se, g_up):
    """Ideal gyro and accelerometer outputs for a 9-vector kinematic state.

    ``g_up`` is the gravity reaction magnitude along world +z; a static level
    sensor reads (0, 0, g_up).
    """
    phi = state[2]
    c = np.cos(phi)
    s = np.sin(phi)
    wz = state[5]
    dwz = state[8]
    ax = state[6]
    ay = state[7]
    a_e = np.empty(3)
    a_e[0] = c * ax + s * ay - dwz * mount_p[1] - wz * wz * mount_p[0]
    a_e[1] = -s * ax + c * ay + dwz * mount_p[0] - wz * wz * mount_p[1]
    a_e[2] = g_up
    omega = R_se[:, 2] * wz
    return omega, R_se @ a_e


@njit
def output_model(state, mount_p, R_se, g_up):
    """y = (pose, gyro, accel) and its analytic 9x9 Jacobian."""
    y = np.empty(9)
    y[0:3] = state[0:3]
    om, acc = imu_outputs(state, mount_p, R_se, g_up)
    y[3:6] = om
    y[6:9] = acc
    C = np.zeros((9, 9))
    for i in range(3):
        C[i, i] = 1.0
    phi = state[2]
    c = np.cos(phi)
    s = np.sin(phi)
    wz = state[5]
    ax = state[6]
    ay = state[7]
    C[3:6, 5] = R_se[:, 2]
    # d a_E / d state, then rotate into S
    dE = np.zeros((3, 9))
    dE[0, 2] = -s * ax + c * ay
    dE[1, 2] = -c * ax - s * ay
    dE[0, 5] = -2.0 * wz * mount_p[0]
    dE[1, 5] = -2.0 * wz * mount_p[1]
    dE[0, 6] = c
    dE[1, 6] = -s
    dE[0, 7] = s
    dE[1, 7] = c
    dE[0, 8] = -mount_p[1]
    dE[1, 8] = mount_p[0]
    C[6:9, :] = R_se @ dE
    return y, C


@njit
def transition_matrix(T):
    A = np.eye(9)
    for i in range(3):
        A[i, 3 + i] = T
        A[i, 6 + i] = 0.5 * T * T
        A[3 + i, 6 + i] = T
    return A


@njit
def ekf_step(x, P, y, Q, R, T, mount_p, R_se, g_up):
    """One predict/update cycle. Returns (x, P, K, status)."""
    A = transition_matrix(T)
    x_pred = A @ x
    P_pred = A @ P @ A.T + Q
    y_pred, C = output_model(x_pred, mount_p, R_se, g_up)
    S = C @ P_pred @ C.T + R
    if not np.isfinite(S).all() or abs(np.linalg.det(S)) == 0.0:
        return x, P, np.zeros((9, 9)), SINGULAR
    K = np.linalg.solve(S.T, (P_pred @ C.T).T).T
    P_new = P_pred - K @ C @ P_pred
    P_new = 0.5 * (P_new + P_new.T)
    innov = y - y_pred
    innov[2] = wrap_angle(innov[2])
    x_new = x_pred + K @ innov
    x_new[2] = wrap_angle(x_new[2])
    return x_new, P_new, K, OK


@njit
def imu_outputs_batch(states, mount_p, R_se, g_up):
    """Row-wise ``imu_outputs`` for an (N, 9) state array."""
    n = states.shape[0]
    c = np.cos(states[:, 2])
    s = np.sin(states[:, 2])
    wz = states[:, 5]
    dwz = states[:, 8]
    a_e = np.empty((n, 3))
    a_e[:, 0] = c * states[:, 6] + s * states[:, 7] - dwz * mount_p[1] - wz * wz * mount_p[0]
    a_e[:, 1] = -s * states[:, 6] + c * states[:, 7] + dwz * mount_p[0] - wz * wz * mount_p[1]
    a_e[:, 2] = g_up
    omega = np.outer(wz, R_se[:, 2])
    acc = a_e @ np.ascontiguousarray(R_se.T)
    return omega, acc


@njit
def calibration_objective(params, states, omega_meas, acc_meas, omega_max, acc_max, g_up):
    """Normalised squared output error summed over samples for one mounting."""
    R_se = np.ascontiguousarray(euler_xyz_matrix(params[3:6]).T)
    om, acc = imu_outputs_batch(states, params[0:3], R_se, g_up)
    eo = np.sum((omega_meas - om) ** 2)
    ea = np.sum((acc_meas - acc) ** 2)
    return eo / (omega_max * omega_max) + ea / (acc_max * acc_max)


@njit
def calibration_objective_batch(particles, states, omega_meas, acc_meas, omega_max, acc_max, g_up):
    out = np.empty(particles.shape[0])
    for i in range(particles.shape[0]):
        out[i] = calibration_objective(particles[i], states, omega_meas, acc_meas, omega_max, acc_max, g_up)
    return out


# ---------------------------------------------------------------- detection


@njit
def first_crossing(series, force_thr, moment_thr):
    """Index of the first row with |fx|,|fy| > force_thr or |mz| > moment_thr, else -1."""
    for k in range(series.shape[0]):
        if abs(series[k, 0]) > force_thr or abs(series[k, 1]) > force_thr or abs(series[k, 2]) > moment_thr:
            return k
    return -1


# ---------------------------------------------------------------- estimator model


@njit
def model_terms(pose, twist, geo, dyn):
    """All equation-of-motion terms at a measured state.

    Returns (q, J, M, c, C, g, f_fr, status).
    """
    q, st, _ = ik(pose, geo)
    if st != OK:
        z3 = np.zeros((3, 3))
        return q, np.zeros((9, 3)), z3, np.zeros(3), z3, np.zeros(3), np.zeros(3), st
    if is_singular(q, pose, geo):
        z3 = np.zeros((3, 3))
        return q, np.zeros((9, 3)), z3, np.zeros(3), z3, np.zeros(3), np.zeros(3), SINGULAR
    J = jac_qx(q, pose, geo)
    M = mass_matrix(q, pose, geo, dyn, J)
    c, C = coriolis(q, pose, geo, dyn, J, twist)
    g = gravity(q, pose, geo, dyn, J)
    ffr = friction(J, dyn, twist)
    return q, J, M, c, C, g, ffr, OK
