import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jointaec import metrics


def test_erle_cases(rng):
    d = rng.standard_normal(20000)
    assert np.allclose(metrics.erle_curve(d, d), 0.0, atol=1e-9)
    assert metrics.erle_curve(d, 0.1 * d)[-1] == pytest.approx(20.0, abs=1e-9)
    assert np.all(metrics.erle_curve(d, np.zeros_like(d))[1:] == 80.0)
    assert np.all(metrics.erle_curve(np.zeros_like(d), d)[1:] == -80.0)


def test_erle_finite_where_denominator_positive(rng):
    d = rng.standard_normal(5000)
    p = rng.standard_normal(5000)
    p[:100] = 0.0
    c = metrics.erle_curve(d, p)
    assert np.all(np.isfinite(c[100:]))
    assert np.all(c[:100] == 80.0)


def test_interval_cases(rng):
    d, n = rng.standard_normal(4000), rng.standard_normal(4000)
    assert metrics.interval_metrics(d, d, n, n) == (0.0, 0.0)
    e, nn = metrics.interval_metrics(d, d / math.sqrt(10), n, n / math.sqrt(10), 100, 3000)
    assert e == pytest.approx(10.0) and nn == pytest.approx(10.0)


def test_interval_matches_erle_asymptote(rng):
    d = rng.standard_normal(40000)
    g = 10 ** (-13.0 / 20)
    curve = metrics.erle_curve(d, g * d)
    e, _ = metrics.interval_metrics(d, g * d, d, d)
    assert abs(curve[-1] - e) < 0.1


def test_ratio_conventions():
    assert math.isnan(metrics.ratio_db(0.0, 0.0))
    assert metrics.ratio_db(1.0, 0.0) == 80.0
    assert metrics.ratio_db(0.0, 1.0) == -80.0
    assert metrics.ratio_db(1e20, 1.0) == 80.0


@given(st.floats(1e-3, 1e3), st.integers(0, 2 ** 31 - 1))
def test_scale_invariance(c, seed):
    rng = np.random.default_rng(seed)
    d, p, s, ps = (rng.standard_normal(3000) for _ in range(4))
    assert metrics.erle_curve(c * d, c * p)[-1] == pytest.approx(metrics.erle_curve(d, p)[-1], abs=1e-6)
    a = metrics.interval_metrics(c * d, c * p, c * s, c * ps)
    b = metrics.interval_metrics(d, p, s, ps)
    assert a == pytest.approx(b, abs=1e-9)
    assert metrics.speech_distortion_ratio(c * s, c * ps) == pytest.approx(
        metrics.speech_distortion_ratio(s, ps), abs=1e-9)


@given(st.integers(1, 2999), st.integers(0, 2 ** 31 - 1))
def test_interval_additivity(split, seed):
    rng = np.random.default_rng(seed)
    d, p = rng.standard_normal(3000), rng.standard_normal(3000)
    whole = metrics.energy(p)
    assert metrics.energy(p, 0, split) + metrics.energy(p, split) == pytest.approx(whole)
    e_whole, _ = metrics.interval_metrics(d, p, d, d)
    num = metrics.energy(d, 0, split) + metrics.energy(d, split)
    assert e_whole == pytest.approx(10 * math.log10(num / whole))


def test_component_loss_cases(rng):
    s = rng.standard_normal(100)
    z = np.zeros(100)
    assert metrics.component_loss(z, z, s, s) == 0.0
    unit = np.zeros(100)
    unit[7] = 1.0
    assert metrics.component_loss(unit, z, s, s, alpha=2.0) == pytest.approx(2.0)
    d, n, ps = (rng.standard_normal(100) for _ in range(3))
    losses = [metrics.component_loss(d, n, ps, s, alpha=a) for a in (0.5, 1.0, 2.0)]
    assert losses == sorted(losses)
    with pytest.raises(ValueError):
        metrics.component_loss(d[:5], n, ps, s)


@given(st.integers(0, 2 ** 31 - 1))
def test_component_loss_nonnegative(seed):
    rng = np.random.default_rng(seed)
    args = [rng.standard_normal(50) * rng.integers(0, 2) for _ in range(4)]
    loss = metrics.component_loss(*args)
    assert loss >= 0.0
    zero = not args[0].any() and not args[1].any() and np.array_equal(args[2], args[3])
    assert (loss == 0.0) == zero


def test_sdr_cases(rng):
    s = rng.standard_normal(10000)
    assert metrics.speech_distortion_ratio(s, s) == 80.0
    assert metrics.speech_distortion_ratio(s, np.zeros_like(s)) == pytest.approx(0.0)
    assert metrics.speech_distortion_ratio(s, 0.3 * s) == 80.0
    v = rng.standard_normal(10000)
    v -= v @ s / (s @ s) * s
    v *= np.linalg.norm(s) / np.linalg.norm(v) * 0.1
    assert metrics.speech_distortion_ratio(s, s + v) == pytest.approx(20.0, abs=0.1)


def test_phase_bounds():
    assert metrics.phase_bounds(100, 30) == {"single": (0, 30), "double": (30, 100)}
    assert metrics.phase_bounds(100, 130)["double"] == (100, 100)


def test_evaluate_and_csv(tmp_path, rng):
    n = 4000
    d, nz, s = rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n)
    taps = {"aec": {"echo": 0.5 * d, "speech": s, "noise": nz},
            "pf": {"echo": 0.1 * d, "speech": 0.9 * s, "noise": 0.5 * nz}}
    rep = metrics.evaluate("sc0", d, nz, s, taps, onset=1000)
    assert (rep.n1, rep.n2) == (1000, n)
    assert len(rep.rows) == 4
    assert rep.value("pf", "double", "E_dB") == pytest.approx(20.0)
    assert rep.value("aec", "single", "N_dB") == pytest.approx(0.0)
    assert math.isnan(rep.value("aec", "single", "SDR_dB"))
    summary = metrics.summarize([rep, rep])
    assert summary[("pf", "double")]["E_dB"] == pytest.approx(20.0)
    metrics.write_metrics_csv(tmp_path / "m.csv", [rep])
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == ",".join(metrics.METRIC_COLUMNS) and len(lines) == 5
    metrics.write_erle_csv(tmp_path / "e.csv", rep.erle_curves["pf"], step=100)
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "sample_index,erle_dB"
