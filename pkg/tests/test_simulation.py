import numpy as np
import pytest

from rrrfusion import _kernels as K
from rrrfusion.config import load_config
from rrrfusion.dynamics import ModelTerms
from rrrfusion.errors import Unreachable
from rrrfusion.kinematics import ContactLocation, constraint_residual, inverse_kinematics
from rrrfusion.simulation import (ComputedTorqueController, ContactScenario, contact_force, excitation_trajectory,
                                  generate_rectangle_trajectory, run_scenario, step_plant, waypoint_trajectory)

SQUARE = [[-0.1, -0.1], [0.1, -0.1], [0.1, 0.1], [-0.1, 0.1]]


@pytest.fixture(scope="module")
def rectangle(geo):
    return generate_rectangle_trajectory(SQUARE, (1.41, 12.44), 0.1, geo=geo)


def test_rectangle_peaks_match_limits(rectangle):
    speed = np.linalg.norm(rectangle.twist[:, :2], axis=1)
    acc = np.linalg.norm(rectangle.accel[:, :2], axis=1)
    assert speed.max() == pytest.approx(1.41, rel=0.01)
    assert acc.max() == pytest.approx(12.44, rel=0.01)


def test_rectangle_visits_corners_and_closes(rectangle):
    np.testing.assert_allclose(rectangle.pose[0], [-0.1, -0.1, 0.0])
    np.testing.assert_allclose(rectangle.pose[-1], [-0.1, -0.1, 0.0], atol=1e-12)
    for c in SQUARE:
        assert np.min(np.linalg.norm(rectangle.pose[:, :2] - c, axis=1)) < 1e-9


def test_uniform_sampling(rectangle):
    np.testing.assert_allclose(np.diff(rectangle.t), 1e-3, rtol=1e-9)


def test_degenerate_rectangle_is_static():
    traj = generate_rectangle_trajectory([[0.02, 0.01]] * 4, (1.0, 10.0), 0.05)
    np.testing.assert_allclose(traj.pose, np.tile([0.02, 0.01, 0.0], (len(traj), 1)))
    np.testing.assert_array_equal(traj.twist, 0.0)


def test_stored_derivatives_are_consistent(rectangle):
    T = rectangle.T
    fd_v = (rectangle.pose[2:] - rectangle.pose[:-2]) / (2 * T)
    err = np.abs(fd_v - rectangle.twist[1:-1])
    # exact on constant-acceleration stretches, O(a T) only at the switching ticks
    assert np.median(err) < 1e-12
    assert err.max() <= 12.44 * T
    fd_a = (rectangle.twist[2:] - rectangle.twist[:-2]) / (2 * T)
    assert np.median(np.abs(fd_a - rectangle.accel[1:-1])) < 1e-9


def test_short_move_never_reaches_cruise():
    traj = waypoint_trajectory([[0, 0, 0], [0.01, 0, 0]], 1.41, 12.44, 0.0)
    assert np.linalg.norm(traj.twist, axis=1).max() < 1.41 * 0.9
    np.testing.assert_allclose(traj.pose[-1], [0.01, 0, 0], atol=1e-12)


def test_unreachable_corner_raises(geo):
    with pytest.raises(Unreachable):
        generate_rectangle_trajectory([[-0.3, -0.3], [0.3, -0.3], [0.3, 0.3], [-0.3, 0.3]], (1.0, 10.0), geo=geo)


def test_excitation_starts_at_rest_and_is_consistent():
    traj = excitation_trajectory(1.0)
    np.testing.assert_allclose(traj.twist[0], 0.0, atol=1e-12)
    T = traj.T
    fd = (traj.pose[2:] - traj.pose[:-2]) / (2 * T)
    # central-difference truncation error is bounded by T^2 / 6 * max|jerk|
    jerk = np.gradient(traj.accel, traj.T, axis=0)
    bound = traj.T ** 2 / 6 * np.abs(jerk).max(axis=0) * 1.2
    assert np.all(np.abs(fd - traj.twist[1:-1]).max(axis=0) < bound)


# ---------------------------------------------------------------- plant


def test_plant_at_rest_stays_at_rest(geo, params):
    pose = np.array([0.01, 0.02, 0.1])
    x, v = step_plant(pose, np.zeros(3), np.zeros(3), geo, params)
    np.testing.assert_allclose(x, pose, atol=1e-15)
    np.testing.assert_array_equal(v, 0.0)


def test_rk4_converges_at_fourth_order(geo, params):
    pose, twist = np.array([0.01, 0.0, 0.0]), np.array([0.3, -0.2, 1.0])
    tau = np.array([0.5, -0.3, 0.2])
    ends = [np.concatenate(step_plant(pose, twist, tau, geo, params, dt=0.02, substeps=n)) for n in (5, 10, 20)]
    d1 = np.max(np.abs(ends[0] - ends[1]))
    d2 = np.max(np.abs(ends[1] - ends[2]))
    assert d2 < 1e-8
    assert d1 / d2 == pytest.approx(16, rel=0.25)


def test_loop_closure_holds_along_run(geo):
    cfg = load_config("platform_collision")
    log = run_scenario(cfg.setup())
    worst = max(np.max(np.abs(constraint_residual(inverse_kinematics(p, geo), p, geo))) for p in log.pose[::10])
    assert worst < 1e-9


# ---------------------------------------------------------------- controller


def _track(geo, params, traj, ctrl, x0=None):
    pose = traj.pose[0].copy() if x0 is None else np.asarray(x0, float)
    twist = traj.twist[0].copy()
    err = []
    for k in range(len(traj)):
        terms = ModelTerms(pose, twist, geo, params)
        tau, _ = ctrl(traj.pose[k], traj.twist[k], traj.accel[k], pose, twist, terms)
        err.append(traj.pose[k] - pose)
        pose, twist = step_plant(pose, twist, tau, geo, params)
    return np.array(err)


def test_feedforward_tracks_with_exact_model(geo, params):
    traj = excitation_trajectory(1.0)
    err = _track(geo, params, traj, ComputedTorqueController())
    assert np.max(np.abs(err[:, :2])) < 1e-4


def test_step_response_has_no_large_overshoot(geo, params):
    traj = waypoint_trajectory([[0, 0, 0], [0, 0, 0]], 1.0, 1.0, 0.3)
    err = _track(geo, params, traj, ComputedTorqueController(tau_limit=1e3), x0=[0.005, 0.0, 0.0])
    assert abs(err[-1, 0]) < 1e-4
    assert err[:, 0].max() <= 0.1 * 0.005 + 1e-12  # error starts at -5 mm


def test_controller_saturates(geo, params):
    ctrl = ComputedTorqueController(tau_limit=0.5)
    terms = ModelTerms(np.zeros(3), np.zeros(3), geo, params)
    tau, f = ctrl(np.array([0.05, 0, 0]), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), terms)
    assert np.max(np.abs(tau)) == pytest.approx(0.5)
    np.testing.assert_allclose(f, terms.H.T @ tau)


# ---------------------------------------------------------------- contacts


def _rows(geo, locs, walls, k=5e4, c=50.0):
    from rrrfusion.simulation import Trajectory
    traj = Trajectory(np.array([0.0, 1e-3]), np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)))
    return ContactScenario("clamping" if len(locs) == 2 else "platform_collision", locs, 0.0, k, c,
                           np.asarray(walls, float)).contact_rows(traj, geo)


def test_no_penetration_no_force(geo):
    rows = _rows(geo, [ContactLocation.platform(0.1, 0)], [[0.12, 0.0, -1.0, 0.0]])
    F, link = contact_force(rows, inverse_kinematics(np.zeros(3), geo), np.zeros(3), np.zeros(3), geo)
    np.testing.assert_array_equal(F, 0.0)
    np.testing.assert_array_equal(link, 0.0)


def test_penetration_force_is_spring_plus_damper(geo):
    rows = _rows(geo, [ContactLocation.platform(0.1, 0)], [[0.099, 0.0, -1.0, 0.0]])
    F, link = contact_force(rows, inverse_kinematics(np.zeros(3), geo), np.zeros(3), np.array([0.2, 0, 0]), geo)
    np.testing.assert_allclose(link[0], [-(5e4 * 1e-3 + 50 * 0.2), 0.0], rtol=1e-9)
    np.testing.assert_allclose(F[:2], link[0], rtol=1e-9)


def test_symmetric_clamp_gives_pure_moment(geo):
    locs = [ContactLocation.platform(0.05, 0.0), ContactLocation.platform(-0.05, 0.0)]
    walls = [[0.05, 0.001, 0.0, 1.0], [-0.05, -0.001, 0.0, -1.0]]
    F, link = contact_force(_rows(geo, locs, walls), inverse_kinematics(np.zeros(3), geo),
                            np.zeros(3), np.zeros(3), geo)
    np.testing.assert_allclose(F[:2], 0.0, atol=1e-12)
    assert abs(F[2]) > 1e-3


def test_scenario_validation():
    with pytest.raises(ValueError):
        ContactScenario("clamping", [ContactLocation.platform()])
    with pytest.raises(ValueError):
        ContactScenario("none", [ContactLocation.platform()])
    with pytest.raises(ValueError):
        ContactScenario("sideways")


def test_onset_outside_trajectory_rejected(geo):
    traj = waypoint_trajectory([[-0.05, 0, 0], [0.05, 0, 0]], 0.45, 12.44, 0.1)
    sc = ContactScenario("platform_collision", [ContactLocation.platform(0.1, 0)], onset=10.0)
    with pytest.raises(ValueError):
        sc.contact_rows(traj, geo)


@pytest.fixture(scope="module")
def platform_log():
    return run_scenario(load_config("platform_collision").setup())


def test_contact_force_zero_before_onset(platform_log):
    on = platform_log.onset_index()
    assert on is not None and on > 100
    np.testing.assert_array_equal(platform_log.contact_forces[: on - 1], 0.0)


def test_platform_impact_force_rises_during_compression(platform_log):
    on = platform_log.onset_index()
    mag = platform_log.contact_magnitude()
    peak = on + int(np.argmax(mag[on:on + 100]))
    assert np.all(np.diff(mag[on:peak + 1]) > 0)
    assert mag[peak] > 50.0


def test_same_seed_gives_identical_logs():
    cfg = load_config("link1_collision")
    a = run_scenario(cfg.setup())
    b = run_scenario(cfg.setup())
    for name in ("pose", "ekf", "f_direct", "f_mo", "imu_accel", "q_a_meas"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_different_seed_changes_noise():
    cfg = load_config("link1_collision")
    a = run_scenario(cfg.setup(seed=1))
    b = run_scenario(cfg.setup(seed=2))
    assert not np.array_equal(a.imu_accel, b.imu_accel)


def test_csv_header_has_units(platform_log, tmp_path):
    path = tmp_path / "log.csv"
    platform_log.to_csv(path)
    header = path.read_text().splitlines()[0].split(",")
    assert header[0] == "t_s"
    assert "true_phi_rad" in header and "direct_fx_N" in header and "mo135_mz_Nm" in header
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (len(platform_log.t), len(header))
