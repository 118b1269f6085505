import dataclasses
import math

import numpy as np
import pytest
from scipy import stats
from scipy.signal import welch

from jointaec import sim
from jointaec.sim import RANGES, SimulationError

FS = 16000
ROOM = [5.0, 4.0, 3.0]


def test_free_field_single_impulse():
    src, mic = [1.0, 1.0, 1.5], [2.37, 1.8, 1.2]
    h = sim.image_method_rir(ROOM, src, mic, 0.0, length=2000)
    dist = np.linalg.norm(np.subtract(src, mic))
    peak = int(np.argmax(np.abs(h)))
    assert abs(peak - dist / sim.SPEED_OF_SOUND * FS) <= 1
    # the windowed-sinc kernel carries the full spreading gain at DC
    assert h.sum() == pytest.approx(1.0 / (4 * math.pi * dist), rel=0.02)
    far = np.abs(np.arange(h.size) - peak) > sim.FRACTIONAL_HALF_WIDTH
    assert not h[far].any()


@pytest.mark.parametrize("seed", range(5))
def test_direct_path_and_causality(seed):
    rng = np.random.default_rng(seed)
    room = rng.uniform([3, 3, 2], [8, 8, 3.5])
    src, mic = rng.uniform(0.3, room - 0.3), rng.uniform(0.3, room - 0.3)
    h = sim.image_method_rir(room, src, mic, 0.3)
    n0 = round(FS * np.linalg.norm(src - mic) / sim.SPEED_OF_SOUND)
    first = int(np.flatnonzero(np.abs(h) > 1e-3 * np.max(np.abs(h)))[0])
    assert abs(int(np.argmax(np.abs(h[: n0 + 20]))) - n0) <= 1
    assert first >= n0 - sim.FRACTIONAL_HALF_WIDTH


def test_decay_time_04():
    h = sim.image_method_rir(ROOM, [1.2, 1.1, 1.4], [3.1, 2.6, 1.3], 0.4, length=int(1.6 * 0.4 * FS))
    assert abs(sim.decay_time(h, FS) / 0.4 - 1.0) < 0.2


def test_infeasible_t60_rejected():
    with pytest.raises(SimulationError):
        sim.wall_reflection([8.0, 8.0, 3.5], 0.05)
    with pytest.raises(SimulationError):
        sim.image_method_rir(ROOM, [6.0, 1.0, 1.0], [1.0, 1.0, 1.0], 0.3)


def test_reflection_monotone_in_t60():
    betas = [sim.wall_reflection(ROOM, t) for t in (0.2, 0.3, 0.4, 0.6)]
    assert all(0 < b < 1 for b in betas)
    assert np.all(np.diff(betas) > 0)


def test_coincident_mics_identical(rng):
    mics = np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    out = sim.diffuse_noise(rng.standard_normal(8000), mics)
    assert np.array_equal(out[0], out[1])


def test_coherence_500hz_10cm(rng):
    mics = np.array([[1.0, 1.0, 1.0], [1.1, 1.0, 1.0]])
    out = sim.diffuse_noise(rng.standard_normal(30 * FS), mics)
    f, coh = sim.welch_coherence(out[0], out[1], FS)
    k = int(np.argmin(np.abs(f - 500)))
    model = sim.spherical_coherence(f[k], 0.1)
    assert abs(np.abs(coh[k]) ** 2 - model ** 2) < 0.1


def test_noise_psd_preserved(rng):
    mics = sim.circular_array([2, 2, 1.5], 0.1, 4)
    src = sim.pink_noise(20 * FS, rng)
    out = sim.diffuse_noise(src, mics)
    f, p_in = welch(src, FS, nperseg=2048)
    for ch in out:
        _, p_out = welch(ch, FS, nperseg=2048)
        lo = 62.5
        while lo * 2 <= FS / 2:
            band = (f >= lo) & (f < 2 * lo)
            assert abs(10 * np.log10(p_out[band].sum() / p_in[band].sum())) < 1.0
            lo *= 2


def test_silent_scene_is_echo():
    spec = sim.sample_scenario(5, duration_s=2.0)
    sc = sim.synthesize_scene(spec, talker_active=False, noise_active=False)
    assert np.array_equal(sc.y, sc.d)
    assert not sc.s.any() and not sc.n.any()


def test_ser_and_snr_levels():
    spec = dataclasses.replace(sim.sample_scenario(7, duration_s=4.0), ser_db=0.0, snr_db=15.0)
    sc = sim.synthesize_scene(spec)
    act = slice(sc.onset, None)
    ser = 10 * np.log10(np.sum(sc.d[0, act] ** 2) / np.sum(sc.s[0, act] ** 2))
    snr = 10 * np.log10(np.sum(sc.d[0] ** 2) / np.sum(sc.n[0] ** 2))
    assert abs(ser) < 0.01 and abs(snr - 15.0) < 0.01
    assert np.allclose(sc.y, sc.d + sc.s + sc.n, rtol=0, atol=0)


def test_anechoic_reference_matches_dry():
    spec = dataclasses.replace(sim.sample_scenario(11, duration_s=6.0), t60=0.0)
    sc = sim.synthesize_scene(spec)
    delay = np.linalg.norm(spec.mic_positions[0] - np.asarray(spec.talker)) / sim.SPEED_OF_SOUND * FS
    back = sim.fractional_shift(sc.s_ref, -delay)
    seg = slice(sc.onset, len(back) - 200)
    r = np.corrcoef(back[seg], sc.s_dry[seg])[0, 1]
    assert r >= 0.999


def test_sample_reproducible():
    assert sim.sample_scenario(42) == sim.sample_scenario(42)
    assert sim.sample_scenario(42) != sim.sample_scenario(43)


def test_sample_ranges_and_t60_uniform():
    t60s = []
    for seed in range(1000):
        spec = sim.sample_scenario(seed)
        room = np.asarray(spec.room)
        for key, val in (("length", room[0]), ("width", room[1]), ("height", room[2]), ("t60", spec.t60),
                         ("diameter", spec.diameter), ("ser_db", spec.ser_db), ("snr_db", spec.snr_db),
                         ("onset_s", spec.onset_s)):
            lo, hi = RANGES[key]
            assert lo <= val <= hi
        pts = np.vstack([spec.mic_positions, spec.loudspeaker, spec.talker])
        assert np.all(pts >= 0.1 - 1e-9) and np.all(pts <= room - 0.1 + 1e-9)
        c = np.asarray(spec.array_center)
        dl = np.linalg.norm(np.asarray(spec.loudspeaker) - c)
        dt = np.linalg.norm(np.asarray(spec.talker) - c)
        assert 0.1 - 1e-9 <= dl <= 0.5 + 1e-9 and 0.5 - 1e-9 <= dt <= 2.0 + 1e-9
        t60s.append(spec.t60)
    assert stats.kstest(t60s, stats.uniform(0.2, 0.4).cdf).pvalue > 0.01


def test_spec_text_round_trip(tmp_path):
    spec = sim.sample_scenario(3)
    assert sim.ScenarioSpec.from_text(spec.to_text()) == spec
    spec.save(tmp_path / "s.txt")
    assert (tmp_path / "s.txt").read_text() == spec.to_text()
    with pytest.raises(SimulationError):
        sim.ScenarioSpec.from_text("room [1,2,3]\n")


def test_scene_files_round_trip(tmp_path):
    sc = sim.synthesize_scene(sim.sample_scenario(2, duration_s=1.0))
    sim.save_scene(sc, tmp_path / "a")
    back = sim.load_scene(tmp_path / "a")
    y32, _ = sim.read_wav(tmp_path / "a" / "y.wav")
    d, s, n = (sim.read_wav(tmp_path / "a" / f"{k}.wav")[0] for k in "dsn")
    assert np.array_equal(y32.astype(np.float32), (d + s + n).astype(np.float32))
    assert np.array_equal(back.y, back.d + back.s + back.n)
    assert back.spec == sc.spec and back.onset == sc.onset
    assert np.allclose(back.d, sc.d, atol=1e-6)
