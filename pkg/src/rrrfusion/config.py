"""Scenario configuration: TOML files layered over the bundled defaults."""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ._toml import load_toml, loads_toml
from .detection import DetectorConfig
from .dynamics import DynamicsParams
from .errors import ConfigInvalid
from .estimation import EkfConfig
from .kinematics import ContactLocation, RobotGeometry
from .sensors import DEG, EncoderModel, ImuModel, ImuMount, PsoSettings, read_calibration
from .simulation import (ComputedTorqueController, ContactScenario, SimulationSetup, Thresholds,
                         excitation_trajectory, generate_rectangle_trajectory, waypoint_trajectory)

LOCATION_KEYS = {"leg", "link", "s", "offset_m"}


def _data_path(name):
    return resources.files("rrrfusion") / "data" / name


def load_defaults():
    return loads_toml(_data_path("defaults.toml").read_text())


def bundled_scenarios():
    """Names of the bundled scenario files."""
    d = _data_path("scenarios")
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".toml"))


def bundled_scenario_path(name):
    p = _data_path("scenarios") / f"{name}.toml"
    if not p.is_file():
        raise FileNotFoundError(f"no bundled scenario named {name!r}")
    return Path(str(p))


def _merge(defaults, overrides):
    out = copy.deepcopy(defaults)
    for section, values in overrides.items():
        if section not in defaults:
            raise ConfigInvalid(section, "unknown section")
        if not isinstance(values, dict):
            raise ConfigInvalid(section, "must be a table")
        for key, value in values.items():
            if key not in defaults[section]:
                raise ConfigInvalid(f"{section}.{key}", "unknown key")
            out[section][key] = value
    return out


def _num(data, section, key, *, positive=False, nonneg=False, integer=False):
    v = data[section][key]
    field = f"{section}.{key}"
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigInvalid(field, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigInvalid(field, "expected an integer")
    if positive and not v > 0:
        raise ConfigInvalid(field, f"must be positive, got {v}")
    if nonneg and not v >= 0:
        raise ConfigInvalid(field, f"must be non-negative, got {v}")
    return int(v) if integer else float(v)


def _arr(data, section, key, shape=None, *, positive=False, nonneg=False):
    field = f"{section}.{key}"
    try:
        a = np.asarray(data[section][key], dtype=float)
    except (TypeError, ValueError):
        raise ConfigInvalid(field, "expected a numeric array") from None
    if shape is not None:
        if a.ndim != len(shape) or any(s is not None and s != n for s, n in zip(shape, a.shape)):
            raise ConfigInvalid(field, f"expected shape {shape}, got {a.shape}")
    if positive and not np.all(a > 0):
        raise ConfigInvalid(field, "entries must be positive")
    if nonneg and not np.all(a >= 0):
        raise ConfigInvalid(field, "entries must be non-negative")
    return a


def _str(data, section, key, choices=None):
    v = data[section][key]
    if not isinstance(v, str):
        raise ConfigInvalid(f"{section}.{key}", "expected a string")
    if choices is not None and v not in choices:
        raise ConfigInvalid(f"{section}.{key}", f"must be one of {', '.join(choices)}")
    return v


@dataclass(eq=False)
class ScenarioConfig:
    """Validated scenario: the merged raw tables plus the built model objects."""

    data: dict
    source: Path | None = None

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            raw = load_toml(path)
        except OSError:
            raise
        except Exception as exc:  # TOML syntax error
            raise ConfigInvalid(str(path), f"cannot parse TOML: {exc}") from None
        return cls.from_dict(raw, source=path)

    @classmethod
    def from_dict(cls, raw, source=None):
        cfg = cls(_merge(load_defaults(), raw), Path(source) if source else None)
        cfg.validate()
        return cfg

    # ------------------------------------------------------------ building

    def validate(self):
        """Build every object once so all errors surface before a run."""
        self.geometry()
        self.plant()
        self.encoder()
        self.imu()
        self.ekf()
        self.gains()
        self.thresholds()
        self.controller()
        self.pso()
        traj = self.trajectory()
        self.scenario(traj)
        _str(self.data, "run", "name")
        _num(self.data, "run", "seed", nonneg=True, integer=True)
        stop = _str(self.data, "run", "stop_on_detection")
        if stop not in ("none", "direct") and not (stop.startswith("mo:") and stop[3:].isdigit()
                                                    and int(stop[3:]) < len(self.gains())):
            raise ConfigInvalid("run.stop_on_detection", "must be none, direct or mo:<gain index>")
        if self.data["imu"]["estimator_mount"] != "truth":
            self.estimator_mount()
        return self

    @property
    def name(self):
        return self.data["run"]["name"]

    @property
    def seed(self):
        return int(self.data["run"]["seed"])

    def _wrap(self, field, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except ConfigInvalid:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigInvalid(field, str(exc)) from None

    def geometry(self):
        d = self.data
        r_b = _num(d, "geometry", "base_radius_m", positive=True)
        r_p = _num(d, "geometry", "platform_radius_m", positive=True)
        l1, l2 = _arr(d, "geometry", "link_lengths_m", (2,), positive=True)
        branch = _num(d, "geometry", "elbow_branch", integer=True)
        return self._wrap("geometry", RobotGeometry.symmetric, r_b, r_p, l1, l2, branch)

    def plant(self):
        d = self.data
        kw = dict(
            link_mass=_num(d, "dynamics", "link_mass_kg", positive=True),
            platform_mass=_num(d, "dynamics", "platform_mass_kg", positive=True),
            platform_inertia=_num(d, "dynamics", "platform_inertia_kgm2", positive=True),
            viscous=_num(d, "dynamics", "viscous_Nms", nonneg=True),
            coulomb=_num(d, "dynamics", "coulomb_Nm", nonneg=True),
            coulomb_width=_num(d, "dynamics", "coulomb_width_radps", positive=True),
            gravity=tuple(_arr(d, "dynamics", "gravity_mps2", (2,))),
        )
        return self._wrap("dynamics", DynamicsParams.default, self.geometry(), **kw)

    def model(self):
        m = _num(self.data, "dynamics", "mismatch")
        if not -1 < m < 1:
            raise ConfigInvalid("dynamics.mismatch", "must lie in (-1, 1)")
        return self.plant().perturbed(m)

    def encoder(self):
        d = self.data
        return EncoderModel(_num(d, "encoder", "noise_std_deg", nonneg=True),
                            _num(d, "encoder", "resolution_deg", nonneg=True))

    def true_mount(self):
        d = self.data
        return ImuMount.from_mm_deg(_arr(d, "imu", "position_mm", (3,)), _arr(d, "imu", "angles_deg", (3,)))

    def imu(self, noise_scale=1.0):
        d = self.data
        return ImuModel(
            accel_noise_density=_num(d, "imu", "accel_noise_density_g", nonneg=True) * noise_scale,
            gyro_noise_density=_num(d, "imu", "gyro_noise_density_dps", nonneg=True) * noise_scale,
            accel_bias_range=_num(d, "imu", "accel_bias_range_g", nonneg=True),
            gyro_bias_range=_num(d, "imu", "gyro_bias_range_dps", nonneg=True),
            accel_resolution=_num(d, "imu", "accel_resolution_mps2", nonneg=True),
            gyro_resolution=_num(d, "imu", "gyro_resolution_dps", nonneg=True),
            delay=_num(d, "imu", "delay_samples", nonneg=True, integer=True),
            sample_rate=_num(d, "imu", "sample_rate_hz", positive=True),
            mount=self.true_mount(),
        )

    def estimator_mount(self):
        choice = _str(self.data, "imu", "estimator_mount")
        if choice == "truth":
            return None
        path = Path(choice)
        if not path.is_absolute() and self.source is not None:
            path = self.source.parent / path
        try:
            return read_calibration(path)
        except (OSError, KeyError) as exc:
            raise ConfigInvalid("imu.estimator_mount", f"cannot read calibration {path}: {exc}") from None

    def ekf(self):
        d = self.data
        T = _num(d, "trajectory", "T_s", positive=True)
        g = {k: _num(d, "ekf", k, positive=True)
             for k in ("R_pose", "R_gyro", "R_accel", "Q_pose", "Q_vel", "Q_accel", "P0")}
        R = np.repeat([g["R_pose"], g["R_gyro"], g["R_accel"]], 3)
        Q = np.repeat([g["Q_pose"], g["Q_vel"], g["Q_accel"]], 3)
        return EkfConfig(Q=Q, R=R, P0=np.full(9, g["P0"]), T=T)

    def gains(self):
        g = _arr(self.data, "observer", "gains", (None,), positive=True)
        if g.size == 0:
            raise ConfigInvalid("observer.gains", "need at least one gain")
        return tuple(float(x) for x in g)

    def thresholds(self):
        """(direct, equal-threshold direct, per-gain MO) threshold sets."""
        d = self.data
        direct = Thresholds(_num(d, "detection", "direct_force_N", positive=True),
                            _num(d, "detection", "direct_moment_Nm", positive=True))
        equal = Thresholds(_num(d, "detection", "equal_force_N", positive=True),
                           _num(d, "detection", "equal_moment_Nm", positive=True))
        f = _arr(d, "detection", "mo_force_N", (None,), positive=True)
        m = _arr(d, "detection", "mo_moment_Nm", (None,), positive=True)
        n = len(self.gains())
        if f.size != n or m.size != n:
            raise ConfigInvalid("detection.mo_force_N", f"needs one threshold per observer gain ({n})")
        _num(d, "detection", "safety_factor", positive=True)
        eg = _num(d, "detection", "equal_gain", positive=True)
        if eg not in self.gains():
            raise ConfigInvalid("detection.equal_gain", "must be one of observer.gains")
        return direct, equal, tuple(Thresholds(float(a), float(b)) for a, b in zip(f, m))

    def detector(self, which="direct"):
        direct, equal, _ = self.thresholds()
        t = direct if which == "direct" else equal
        return DetectorConfig(t.force, t.moment, self.data["detection"]["safety_factor"])

    def mo_detectors(self):
        sf = self.data["detection"]["safety_factor"]
        return [DetectorConfig(t.force, t.moment, sf) for t in self.thresholds()[2]]

    def controller(self):
        d = self.data
        _num(d, "controller", "substeps", positive=True, integer=True)
        return ComputedTorqueController(_num(d, "controller", "kp", positive=True),
                                        _num(d, "controller", "kd", positive=True),
                                        _num(d, "controller", "tau_limit_Nm", positive=True))

    def pso(self):
        d = self.data
        return PsoSettings(
            particles=_num(d, "calibration", "particles", positive=True, integer=True),
            iterations=_num(d, "calibration", "iterations", positive=True, integer=True),
            inertia=_num(d, "calibration", "inertia", nonneg=True),
            cognitive=_num(d, "calibration", "cognitive", nonneg=True),
            social=_num(d, "calibration", "social", nonneg=True),
        )

    def calibration_bounds(self):
        d = self.data
        c = ImuMount.from_mm_deg(_arr(d, "calibration", "nominal_position_mm", (3,)),
                                 _arr(d, "calibration", "nominal_angles_deg", (3,))).as_vector()
        hp = _num(d, "calibration", "position_halfwidth_mm", nonneg=True) * 1e-3
        ha = _num(d, "calibration", "angle_halfwidth_deg", nonneg=True) * DEG
        half = np.array([hp, hp, hp, ha, ha, ha])
        if d["calibration"]["fix_z"]:
            half[2] = 0.0
        return c - half, c + half

    def trajectory(self):
        d = self.data
        kind = _str(d, "trajectory", "kind", ("rectangle", "waypoints", "excitation"))
        T = _num(d, "trajectory", "T_s", positive=True)
        geo = self.geometry()
        if kind == "excitation":
            return self._wrap("trajectory", excitation_trajectory,
                              _num(d, "trajectory", "duration_s", positive=True), T,
                              _arr(d, "trajectory", "center", (3,)),
                              _arr(d, "trajectory", "amplitude", (3,), nonneg=True),
                              _arr(d, "trajectory", "frequency_hz", (3,), positive=True),
                              _num(d, "trajectory", "ramp_s", nonneg=True), geo=geo)
        v = _num(d, "trajectory", "v_max_mps", positive=True)
        a = _num(d, "trajectory", "a_max_mps2", positive=True)
        dwell = _num(d, "trajectory", "dwell_s", nonneg=True)
        if kind == "rectangle":
            corners = _arr(d, "trajectory", "corners_m", (4, 2))
            laps = _num(d, "trajectory", "laps", positive=True, integer=True)
            return self._wrap("trajectory.corners_m", generate_rectangle_trajectory, corners, (v, a), dwell, T,
                              _num(d, "trajectory", "phi_rad"), laps, geo=geo)
        wp = _arr(d, "trajectory", "waypoints", (None, 3))
        if len(wp) < 2:
            raise ConfigInvalid("trajectory.waypoints", "need at least two waypoints")
        return self._wrap("trajectory.waypoints", waypoint_trajectory, wp, v, a, dwell, T, geo=geo)

    def scenario(self, trajectory=None):
        d = self.data["contact"]
        kind = _str(self.data, "contact", "kind")
        locs = []
        if not isinstance(d["locations"], list):
            raise ConfigInvalid("contact.locations", "expected an array of tables")
        for i, row in enumerate(d["locations"]):
            field = f"contact.locations[{i}]"
            if not isinstance(row, dict):
                raise ConfigInvalid(field, "expected a table")
            extra = set(row) - LOCATION_KEYS
            if extra:
                raise ConfigInvalid(f"{field}.{sorted(extra)[0]}", "unknown key")
            off = row.get("offset_m", [0.0, 0.0])
            locs.append(self._wrap(field, ContactLocation, int(row.get("leg", 0)), int(row.get("link", 0)),
                                   float(row.get("s", 0.0)), tuple(float(x) for x in off)))
        sc = self._wrap("contact", ContactScenario, kind, tuple(locs),
                        _num(self.data, "contact", "onset_s", nonneg=True),
                        _num(self.data, "contact", "stiffness_Npm", nonneg=True),
                        _num(self.data, "contact", "damping_Nspm", nonneg=True))
        traj = trajectory if trajectory is not None else self.trajectory()
        self._wrap("contact.onset_s", sc.contact_rows, traj, self.geometry())
        return sc

    def setup(self, seed=None, gains=None, mo_thresholds=None):
        """A ready-to-run ``SimulationSetup``."""
        traj = self.trajectory()
        direct, _, mo = self.thresholds()
        return SimulationSetup(
            geometry=self.geometry(), plant=self.plant(), model=self.model(), trajectory=traj,
            scenario=self.scenario(traj), encoder=self.encoder(), imu=self.imu(),
            estimator_mount=self.estimator_mount(), ekf=self.ekf(),
            mo_gains=self.gains() if gains is None else tuple(gains),
            controller=self.controller(), direct_thresholds=direct,
            mo_thresholds=mo if mo_thresholds is None else tuple(mo_thresholds),
            stop_on_detection=self.data["run"]["stop_on_detection"],
            substeps=int(self.data["controller"]["substeps"]),
            seed=self.seed if seed is None else int(seed), name=self.name,
        )


def load_config(path) -> ScenarioConfig:
    """Load a scenario by path or by bundled name."""
    p = Path(path)
    if not p.exists() and os.sep not in str(path) and not str(path).endswith(".toml"):
        p = bundled_scenario_path(str(path))
    return ScenarioConfig.from_file(p)
