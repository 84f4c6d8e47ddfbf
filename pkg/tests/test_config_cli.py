import numpy as np
import pytest

from rrrfusion.cli import main
from rrrfusion.config import ScenarioConfig, bundled_scenarios, load_config, load_defaults
from rrrfusion.errors import ConfigInvalid, DegenerateExcitation
from rrrfusion.sensors import read_calibration
from rrrfusion.workflows import calibrate, compare_mounts, simulate, sweep, worker_count

SCENARIOS = ["rectangle_contact_free", "platform_collision", "link1_collision", "link2_collision", "clamping"]


def write_toml(path, text):
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------- config


def test_bundled_scenarios_are_listed():
    assert set(SCENARIOS) | {"calibration"} == set(bundled_scenarios())


@pytest.mark.parametrize("name", SCENARIOS + ["calibration"])
def test_bundled_configs_validate_and_build(name):
    cfg = load_config(name)
    cfg.validate()
    assert cfg.name == name
    traj = cfg.trajectory()
    traj.check_reachable(cfg.geometry())
    assert len(traj) > 100


def test_defaults_carry_the_published_numbers():
    d = load_defaults()
    assert d["observer"]["gains"] == [20.0, 100.0, 135.0, 200.0, 500.0]
    assert (d["ekf"]["R_pose"], d["ekf"]["R_gyro"], d["ekf"]["R_accel"]) == (0.12, 1.6e-3, 7e-2)
    assert (d["ekf"]["Q_vel"], d["ekf"]["Q_accel"], d["ekf"]["P0"]) == (10.0, 1e5, 0.1)
    assert d["imu"]["position_mm"] == [75.0, 54.0, -97.0]
    assert d["imu"]["angles_deg"] == [2.2, 3.1, 2.8]


@pytest.mark.parametrize("data,field", [
    ({"dynamics": {"link_mass_kg": -1.0}}, "dynamics.link_mass_kg"),
    ({"dynamics": {"colour": 1}}, "dynamics.colour"),
    ({"nonsense": {}}, "nonsense"),
    ({"trajectory": {"kind": "spiral"}}, "trajectory.kind"),
    ({"observer": {"gains": [20.0, -1.0]}}, "observer.gains"),
    ({"contact": {"kind": "clamping", "locations": [{"leg": 0, "link": 1, "s": 0.5}]}}, "contact"),
    ({"contact": {"kind": "link_collision", "locations": [{"leg": 0, "link": 1, "s": 0.5, "side": 1}]}},
     "contact.locations"),
])
def test_invalid_configs_name_the_field(data, field):
    with pytest.raises(ConfigInvalid) as exc:
        ScenarioConfig.from_dict(data).validate()
    assert exc.value.field.startswith(field)


def test_missing_bundled_name():
    with pytest.raises(FileNotFoundError):
        load_config("no_such_scenario")


# ---------------------------------------------------------------- run


def test_run_contact_free_exits_zero_without_detections(tmp_path, capsys):
    assert main(["run", "rectangle_contact_free", "--out", str(tmp_path)]) == 0
    report = (tmp_path / "rectangle_contact_free_report.txt").read_text()
    rows = report.split("method,fired,tick,delta_ms,channel,false_positive\n")[1].splitlines()
    assert len(rows) == 7 and all(",false," in r for r in rows)
    header = (tmp_path / "rectangle_contact_free_log.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "t_s"
    assert {"true_x_m", "true_phi_rad", "ext_fx_N", "direct_mz_Nm", "mo135_fy_N"} <= set(header)


def test_run_is_byte_identical_across_repeats(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "platform_collision", "--out", str(tmp_path / d)]) == 0
    for f in ("platform_collision_log.csv", "platform_collision_report.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_override_changes_noise(tmp_path):
    main(["run", "rectangle_contact_free", "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["run", "rectangle_contact_free", "--out", str(tmp_path / "b"), "--seed", "2"])
    a = (tmp_path / "a" / "rectangle_contact_free_log.csv").read_bytes()
    b = (tmp_path / "b" / "rectangle_contact_free_log.csv").read_bytes()
    assert a != b


def test_platform_collision_direct_beats_observer():
    res = simulate(load_config("platform_collision"))
    direct = res.reports["direct_7.5N"]
    assert direct.fired and not direct.false_positive
    for g in (20, 100, 135, 200, 500):
        mo = res.reports[f"mo_k{g}"]
        assert not mo.fired or mo.delta_ms >= direct.delta_ms


def test_negative_mass_exits_one_and_names_field(tmp_path, capsys):
    path = write_toml(tmp_path / "bad.toml", "[dynamics]\nlink_mass_kg = -0.5\n")
    assert main(["run", path, "--out", str(tmp_path)]) == 1
    assert "dynamics.link_mass_kg" in capsys.readouterr().err


def test_missing_file_exits_two(tmp_path):
    assert main(["run", str(tmp_path / "absent.toml"), "--out", str(tmp_path)]) == 2


def test_unreadable_toml_exits_one(tmp_path):
    path = write_toml(tmp_path / "broken.toml", "[run\nname = 1\n")
    assert main(["run", path, "--out", str(tmp_path)]) == 1


def test_bad_arguments_exit_one():
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "clamping", "--axis", "colour"])
    assert exc.value.code == 1


# ---------------------------------------------------------------- sweep


def test_gain_sweep_table_shape():
    table = sweep([load_config("platform_collision")], "gains")
    assert table.methods == ["direct_7.5N", "direct_29N", "mo_k20", "mo_k100", "mo_k135", "mo_k200", "mo_k500"]
    assert table.pairing == ("mo_k135", "direct_29N")
    assert table.to_csv().splitlines()[0].endswith("reduction_pct")


def test_single_element_sweep_matches_run():
    cfg = load_config("link1_collision")
    res = simulate(cfg)
    table = sweep([cfg], "seeds", [cfg.seed])
    row = table.rows[f"link1_collision/seed{cfg.seed}"]
    for method, rep in res.reports.items():
        assert row[method] == (rep.delta_ms if rep.fired and not rep.false_positive else None)


def test_ten_seed_contact_free_sweep_has_no_false_positives():
    table = sweep([load_config("rectangle_contact_free")], "seeds", list(range(10)), workers=4)
    assert len(table.rows) == 10
    for row in table.rows.values():
        assert all(v is None for v in row.values())


def test_threshold_sweep_latency_grows_with_threshold():
    table = sweep([load_config("link2_collision")], "thresholds", [7.5, 29.0, 60.0])
    row = table.rows["link2_collision"]
    vals = [row["direct_7.5N"], row["direct_29N"], row["direct_60N"]]
    assert None not in vals[:2]
    assert vals[0] <= vals[1] and (vals[2] is None or vals[1] <= vals[2])


def test_threshold_sweep_needs_values():
    with pytest.raises(ValueError):
        sweep([load_config("clamping")], "thresholds")


def test_sweep_cli_writes_tables(tmp_path, capsys):
    out = tmp_path / "tab"
    assert main(["sweep", "platform_collision", "--values", "135", "--out", str(out)]) == 0
    csv = (tmp_path / "tab.csv").read_text().splitlines()
    assert csv[0] == "scenario,direct_7.5N,direct_29N,mo_k135,reduction_pct"
    assert (tmp_path / "tab.txt").read_text() in capsys.readouterr().out


def test_worker_count_from_environment(monkeypatch):
    monkeypatch.setenv("RRRFUSION_WORKERS", "3")
    assert worker_count() == 3
    assert worker_count(2) == 2
    monkeypatch.setenv("RRRFUSION_WORKERS", "many")
    with pytest.raises(ValueError):
        worker_count()
    with pytest.raises(ValueError):
        worker_count(0)


def test_parallel_sweep_equals_serial():
    cfgs = [load_config("platform_collision"), load_config("clamping")]
    assert sweep(cfgs, "gains", workers=2).to_csv() == sweep(cfgs, "gains", workers=1).to_csv()


@pytest.mark.parametrize("seed", [1, 2])
def test_displaced_imu_adds_no_accuracy(seed):
    near = ([-5.0, 1.0, -97.0], [2.8, -5.2, 2.3])
    far = ([75.0, 54.0, -97.0], [2.2, 3.1, 2.8])
    m = compare_mounts(load_config("rectangle_contact_free"), {"near": near, "far": far}, seed)
    for axis in ("x", "y"):
        a, b = m["near"][f"ekf_nrmse_{axis}"], m["far"][f"ekf_nrmse_{axis}"]
        assert max(a, b) <= 0.02
        assert b >= 0.95 * a


# ---------------------------------------------------------------- calibrate and plot-data


FAST_PSO = "[calibration]\nparticles = 80\niterations = 150\n"


def test_static_calibration_trajectory_is_degenerate(tmp_path, capsys):
    text = "[trajectory]\nkind = \"excitation\"\nduration_s = 0.5\namplitude = [0.0, 0.0, 0.0]\n" + FAST_PSO
    path = write_toml(tmp_path / "static.toml", text)
    with pytest.raises(DegenerateExcitation):
        calibrate(load_config(path))
    assert main(["calibrate", path, "--out", str(tmp_path / "cal.toml")]) == 2
    assert "excitation" in capsys.readouterr().err.lower()


@pytest.mark.slow
def test_doubled_noise_still_recovers_mounting(tmp_path):
    src = (load_config("calibration").source).read_text()
    path = write_toml(tmp_path / "cal.toml", src + FAST_PSO)
    nominal = calibrate(load_config(path))
    doubled = calibrate(load_config(path), noise_scale=2.0)
    assert np.abs(doubled.position_error_mm).max() < 5.0
    assert np.abs(nominal.position_error_mm).max() < 5.0


def test_calibrate_cli_writes_readable_mounting(tmp_path, capsys):
    src = (load_config("calibration").source).read_text()
    path = write_toml(tmp_path / "cal.toml", src + FAST_PSO)
    out = tmp_path / "mount.toml"
    assert main(["calibrate", path, "--out", str(out)]) == 0
    mount = read_calibration(out)
    np.testing.assert_allclose(mount.position * 1e3, [75, 54, -97], atol=5.0)
    assert "error_mm" in capsys.readouterr().out


def test_plot_data_writes_accel_and_force_series(tmp_path):
    assert main(["plot-data", "platform_collision", "--out", str(tmp_path)]) == 0
    accel = np.genfromtxt(tmp_path / "platform_collision_accel.csv", delimiter=",", names=True)
    forces = np.genfromtxt(tmp_path / "platform_collision_forces.csv", delimiter=",", names=True)
    assert "ekf_ax_mps2" in accel.dtype.names and "num_ax_mps2" in accel.dtype.names
    assert "direct_fx_N" in forces.dtype.names and "mo135_fx_N" in forces.dtype.names
    assert np.abs(forces["true_fx_N"]).max() > 7.5
