"""ERLE, noise suppression, component loss and a speech-distortion ratio."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

DB_LIMIT = 80.0
ERLE_SMOOTHING = 0.999


def ratio_db(num: float, den: float, limit: float = DB_LIMIT) -> float:
    """``10 log10(num/den)`` clipped to +-limit; NaN when both energies vanish."""
    if den <= 0.0:
        return math.nan if num <= 0.0 else limit
    if num <= 0.0:
        return -limit
    return float(np.clip(10.0 * math.log10(num / den), -limit, limit))


def recursive_mean(power: np.ndarray, factor: float = ERLE_SMOOTHING) -> np.ndarray:
    return lfilter([1.0 - factor], [1.0, -factor], power)


def erle_curve(echo_ref: np.ndarray, echo_proc: np.ndarray, smoothing: float = ERLE_SMOOTHING) -> np.ndarray:
    """Time-dependent ERLE in dB from one-pole averaged echo powers."""
    num = recursive_mean(np.asarray(echo_ref, dtype=float) ** 2, smoothing)
    den = recursive_mean(np.asarray(echo_proc, dtype=float) ** 2, smoothing)
    out = np.full(num.shape, np.nan)
    pos_den = den > 0.0
    both = pos_den & (num > 0.0)
    out[both] = 10.0 * np.log10(num[both] / den[both])
    out[~pos_den & (num > 0.0)] = DB_LIMIT
    out[pos_den & (num <= 0.0)] = -DB_LIMIT
    return np.clip(out, -DB_LIMIT, DB_LIMIT)


def energy(sig: np.ndarray, n1: int = 0, n2: int | None = None) -> float:
    seg = np.asarray(sig, dtype=float)[n1:n2]
    return float(np.dot(seg, seg))


def interval_metrics(echo_ref, echo_proc, noise_ref, noise_proc, n1: int = 0, n2: int | None = None):
    """Interval ERLE and noise suppression factor over samples ``[n1, n2)`` in dB."""
    erle = ratio_db(energy(echo_ref, n1, n2), energy(echo_proc, n1, n2))
    nsf = ratio_db(energy(noise_ref, n1, n2), energy(noise_proc, n1, n2))
    return erle, nsf


def interference_suppression(echo_ref, noise_ref, echo_proc, noise_proc, n1: int = 0, n2: int | None = None) -> float:
    """Combined echo-plus-noise suppression over ``[n1, n2)`` in dB."""
    ref = np.asarray(echo_ref, dtype=float) + np.asarray(noise_ref, dtype=float)
    proc = np.asarray(echo_proc, dtype=float) + np.asarray(noise_proc, dtype=float)
    return ratio_db(energy(ref, n1, n2), energy(proc, n1, n2))


def component_loss(pf_d, pf_n, pf_s, s_ref, alpha: float = 1.0, beta: float = 1.0) -> float:
    """``alpha ||pf(d)|| + beta ||pf(n)|| + ||s_ref - pf(s)||``."""
    pf_d, pf_n, pf_s, s_ref = (np.asarray(a, dtype=float) for a in (pf_d, pf_n, pf_s, s_ref))
    if not (pf_d.shape == pf_n.shape == pf_s.shape == s_ref.shape):
        raise ValueError("loss terms must share one length")
    return float(alpha * np.linalg.norm(pf_d) + beta * np.linalg.norm(pf_n) + np.linalg.norm(s_ref - pf_s))


def speech_distortion_ratio(s_ref, pf_s) -> float:
    """SDR in dB after least-squares scalar gain alignment of ``pf_s`` to ``s_ref``."""
    s_ref = np.asarray(s_ref, dtype=float)
    pf_s = np.asarray(pf_s, dtype=float)
    ref_e = float(np.dot(s_ref, s_ref))
    proc_e = float(np.dot(pf_s, pf_s))
    gain = float(np.dot(s_ref, pf_s)) / proc_e if proc_e > 0.0 else 0.0
    resid = s_ref - gain * pf_s
    return ratio_db(ref_e, float(np.dot(resid, resid)))


def phase_bounds(n_samples: int, onset: int) -> dict[str, tuple[int, int]]:
    onset = int(min(max(onset, 0), n_samples))
    return {"single": (0, onset), "double": (onset, n_samples)}


@dataclass
class MetricReport:
    """Per-tap, per-phase metrics of one scenario."""

    scenario_id: str
    n1: int
    n2: int
    rows: list = field(default_factory=list)  # dicts matching METRIC_COLUMNS
    erle_curves: dict = field(default_factory=dict)  # tap -> per-sample dB

    def value(self, tap: str, phase: str, key: str) -> float:
        for r in self.rows:
            if r["tap"] == tap and r["phase"] == phase:
                return r[key]
        raise KeyError((tap, phase))


METRIC_COLUMNS = ("scenario_id", "tap", "phase", "E_dB", "N_dB", "I_dB", "SDR_dB", "loss")


def evaluate(scenario_id: str, echo_ref, noise_ref, s_ref, taps: dict, onset: int,
             alpha: float = 1.0, beta: float = 1.0, smoothing: float = ERLE_SMOOTHING) -> MetricReport:
    """Metrics for every tap in ``taps`` (tap -> {"echo", "speech", "noise"} signals).

    References are the first-microphone echo and noise images and the aligned
    speech reference; all signals share the stream time axis.
    """
    echo_ref = np.asarray(echo_ref, dtype=float)
    n = echo_ref.shape[-1]
    bounds = phase_bounds(n, onset)
    report = MetricReport(scenario_id, bounds["double"][0], n)
    for tap, comp in taps.items():
        d, s, nz = comp["echo"][:n], comp["speech"][:n], comp["noise"][:n]
        report.erle_curves[tap] = erle_curve(echo_ref, d, smoothing)
        for phase, (a, b) in bounds.items():
            if b <= a:
                continue
            e_db, n_db = interval_metrics(echo_ref, d, noise_ref, nz, a, b)
            report.rows.append({
                "scenario_id": scenario_id, "tap": tap, "phase": phase,
                "E_dB": e_db, "N_dB": n_db,
                "I_dB": interference_suppression(echo_ref, noise_ref, d, nz, a, b),
                "SDR_dB": speech_distortion_ratio(s_ref[a:b], s[a:b]) if phase == "double" else math.nan,
                "loss": component_loss(d[a:b], nz[a:b], s[a:b], s_ref[a:b], alpha, beta),
            })
    return report


def summarize(reports: list[MetricReport], keys=("E_dB", "N_dB", "I_dB", "SDR_dB")) -> dict:
    """Mean over scenarios per (tap, phase), ignoring NaN entries."""
    groups: dict = {}
    for rep in reports:
        for r in rep.rows:
            groups.setdefault((r["tap"], r["phase"]), []).append(r)
    out = {}
    for key, rows in groups.items():
        out[key] = {}
        for k in keys:
            vals = np.array([r[k] for r in rows], dtype=float)
            vals = vals[np.isfinite(vals)]
            out[key][k] = float(vals.mean()) if vals.size else math.nan
    return out


def write_metrics_csv(path, reports: list[MetricReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for rep in reports:
            for r in rep.rows:
                w.writerow([r[c] if isinstance(r[c], str) else f"{r[c]:.6f}" for c in METRIC_COLUMNS])


def write_erle_csv(path, curve: np.ndarray, step: int = 1) -> None:
    idx = np.arange(0, len(curve), step)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("sample_index", "erle_dB"))
        for i in idx:
            w.writerow((int(i), f"{curve[i]:.4f}"))
