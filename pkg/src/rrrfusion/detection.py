"""Threshold contact detection, threshold calibration, latency tables and error metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRange, EmptyLog

CHANNELS = ("fx", "fy", "mz")
SNR_CAP_DB = 300.0  # reported when the error variance is exactly zero
FORCE_FLOOR = 1.0  # N
MOMENT_FLOOR = 0.1  # N m


@dataclass(frozen=True)
class DetectorConfig:
    force_threshold: float
    moment_threshold: float
    safety_factor: float = 2.0
    debounce_m: int = 1
    debounce_n: int = 1

    def __post_init__(self):
        if not (self.force_threshold > 0 and self.moment_threshold > 0):
            raise ValueError("thresholds must be positive")
        if self.safety_factor <= 0:
            raise ValueError("safety_factor must be positive")
        if not 1 <= self.debounce_m <= self.debounce_n:
            raise ValueError("debounce needs 1 <= m <= n")


@dataclass(frozen=True)
class DetectionReport:
    fired: bool
    tick: int | None = None
    t_fire: float | None = None
    delta_ms: float | None = None  # fire time minus onset
    channel: str | None = None
    false_positive: bool = False


def crossings(wrench_series, config: DetectorConfig):
    """(N, 3) boolean array of per-channel threshold crossings."""
    w = np.abs(np.asarray(wrench_series, dtype=float).reshape(-1, 3))
    thr = np.array([config.force_threshold, config.force_threshold, config.moment_threshold])
    return w > thr


def detect(wrench_series, config: DetectorConfig, T=1e-3, onset=None, t0=0.0) -> DetectionReport:
    """First tick at which the (debounced) threshold rule fires.

    ``onset`` is the tick index of the true contact onset, if known; a fire
    before it is reported as a false positive.
    """
    hits = crossings(wrench_series, config)
    any_hit = hits.any(axis=1)
    m, n = config.debounce_m, config.debounce_n
    if n > 1:
        window = np.convolve(any_hit.astype(int), np.ones(n, dtype=int))[: any_hit.size]
        fire = window >= m
    else:
        fire = any_hit
    idx = np.flatnonzero(fire)
    if idx.size == 0:
        return DetectionReport(False)
    k = int(idx[0])
    # channel: the first one that crossed within the firing window
    lo = max(0, k - n + 1)
    row = np.flatnonzero(hits[lo:k + 1].any(axis=1))[0] + lo
    channel = CHANNELS[int(np.argmax(hits[row]))]
    delta = None if onset is None else round((k - onset) * T * 1e3, 9)
    return DetectionReport(True, k, t0 + k * T, delta, channel, onset is not None and k < onset)


def calibrate_thresholds(wrench_series, safety_factor=2.0, floor=(FORCE_FLOOR, MOMENT_FLOOR)) -> DetectorConfig:
    """Thresholds = ``safety_factor`` times the largest estimate in a contact-free log.

    Forces use the larger of the two force channels. ``floor`` keeps the
    thresholds away from zero for idealised logs.
    """
    w = np.asarray(wrench_series, dtype=float)
    if w.size == 0:
        raise EmptyLog("cannot calibrate thresholds from an empty log")
    w = np.abs(w.reshape(-1, 3))
    f = max(safety_factor * float(w[:, :2].max()), floor[0])
    m = max(safety_factor * float(w[:, 2].max()), floor[1])
    return DetectorConfig(f, m, safety_factor)


# ---------------------------------------------------------------- metrics


def _pair(estimate, truth):
    e = np.asarray(estimate, dtype=float)
    t = np.asarray(truth, dtype=float)
    if e.shape != t.shape:
        raise ValueError("estimate and truth differ in shape")
    if t.shape[0] < 2:
        raise ValueError("need at least two samples")
    return e, t


def nrmse(estimate, truth):
    """RMSE normalised by the observed range of the truth (per column for 2-D input)."""
    e, t = _pair(estimate, truth)
    rng = np.ptp(t, axis=0)
    if np.any(rng <= 0):
        raise DegenerateRange("truth series has zero range")
    return np.sqrt(np.mean((e - t) ** 2, axis=0)) / rng


def snr(estimate, truth):
    """10 log10(var(truth) / var(error)) in dB, capped at ``SNR_CAP_DB``."""
    e, t = _pair(estimate, truth)
    vt = np.var(t, axis=0)
    if np.any(vt <= 0):
        raise DegenerateRange("truth series is constant")
    ve = np.var(e - t, axis=0)
    with np.errstate(divide="ignore"):
        out = np.where(ve > 0, 10.0 * np.log10(vt / np.where(ve > 0, ve, 1.0)), SNR_CAP_DB)
    return np.minimum(out, SNR_CAP_DB)


# ---------------------------------------------------------------- latency table


def reduction(dt_mo, dt_direct):
    """Relative latency reduction (dt_MO - dt_direct) / dt_MO in percent.

    None when either method did not fire or the MO latency is zero.
    """
    if dt_mo is None or dt_direct is None or dt_mo == 0:
        return None
    return 100.0 * (dt_mo - dt_direct) / dt_mo


@dataclass
class LatencyTable:
    """Detection latencies (ms) per scenario and method; None means no detection."""

    methods: list
    rows: dict  # scenario -> {method: latency or None}
    pairing: tuple | None = None  # (mo method, direct method) for the reduction column

    def reductions(self):
        if self.pairing is None:
            return {}
        mo, direct = self.pairing
        return {s: reduction(r.get(mo), r.get(direct)) for s, r in self.rows.items()}

    def _cells(self):
        header = ["scenario", *self.methods]
        red = self.reductions()
        if self.pairing is not None:
            header.append("reduction_pct")
        body = []
        for s, r in self.rows.items():
            cells = [s] + [_fmt(r.get(m)) for m in self.methods]
            if self.pairing is not None:
                cells.append(_fmt(red[s], "%.0f"))
            body.append(cells)
        return header, body

    def to_csv(self):
        header, body = self._cells()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()

    def to_text(self):
        header, body = self._cells()
        widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
                 for row in [header, *body]]
        return "\n".join(lines) + "\n"


def _fmt(v, fmt="%g"):
    return "-" if v is None else fmt % v


def latency_table(results, methods=None, pairing=None) -> LatencyTable:
    """Build a table from ``{scenario: {method: DetectionReport or latency}}``.

    False positives and non-detections both become the "-" sentinel.
    """
    rows = {}
    seen = []
    for scenario, per_method in results.items():
        rows[scenario] = {}
        for method, value in per_method.items():
            if method not in seen:
                seen.append(method)
            if isinstance(value, DetectionReport):
                value = value.delta_ms if value.fired and not value.false_positive else None
            rows[scenario][method] = value
    return LatencyTable(list(methods or seen), rows, pairing)


def direct_label(cfg: DetectorConfig):
    return f"direct_{cfg.force_threshold:g}N"


def mo_label(gain):
    return f"mo_k{gain:g}"


def analyse_log(log, direct_configs, mo_configs):
    """Detection reports for one simulated run.

    ``log`` is a ``SimLog``; ``direct_configs`` a list of ``DetectorConfig``
    applied to the direct-method estimate, ``mo_configs`` one per observer
    gain. Returns ``{method label: DetectionReport}``.
    """
    onset = log.onset_index()
    T = log.T
    out = {}
    for cfg in direct_configs:
        out[direct_label(cfg)] = detect(log.f_direct, cfg, T, onset, log.t[0])
    for g, (gain, cfg) in enumerate(zip(log.gains, mo_configs)):
        out[mo_label(gain)] = detect(log.f_mo[:, g], cfg, T, onset, log.t[0])
    return out
