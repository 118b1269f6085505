"""Acoustic scenario simulator: image-method RIRs, diffuse noise, scene synthesis."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numba import njit
from scipy.io import wavfile
from scipy.optimize import brentq
from scipy.signal import fftconvolve, lfilter

SPEED_OF_SOUND = 343.0
WALL_MARGIN = 0.1
FRACTIONAL_HALF_WIDTH = 16

RANGES = {
    "diameter": (0.07, 0.15),
    "length": (3.0, 8.0),
    "width": (3.0, 8.0),
    "height": (2.0, 3.5),
    "t60": (0.2, 0.6),
    "loudspeaker_distance": (0.1, 0.5),
    "talker_distance": (0.5, 2.0),
    "azimuth_deg": (0.0, 360.0),
    "elevation_deg": (-20.0, 20.0),
    "ser_db": (-10.0, 10.0),
    "snr_db": (10.0, 25.0),
    "onset_s": (1.0, 4.0),
}


class SimulationError(ValueError):
    pass


# --------------------------------------------------------------------------- RIRs


def sabine_absorption(room, t60: float, c: float = SPEED_OF_SOUND) -> float:
    L, W, H = room
    volume = L * W * H
    surface = 2.0 * (L * W + L * H + W * H)
    return 24.0 * math.log(10.0) * volume / (c * surface * t60)


@njit(cache=True)
def _lattice_amplitudes(src, mic, room, fs, c, length, amp):
    """Integer-delay image amplitudes split by reflection order: ``amp[n, order]``."""
    max_dist = length * c / fs
    nx = int(math.ceil(max_dist / (2.0 * room[0]))) + 1
    ny = int(math.ceil(max_dist / (2.0 * room[1]))) + 1
    nz = int(math.ceil(max_dist / (2.0 * room[2]))) + 1
    max_order = amp.shape[1] - 1
    for qx in range(2):
        for qy in range(2):
            for qz in range(2):
                for mx in range(-nx, nx + 1):
                    dx = (1 - 2 * qx) * src[0] + 2.0 * mx * room[0] - mic[0]
                    rx = abs(mx - qx) + abs(mx)
                    for my in range(-ny, ny + 1):
                        dy = (1 - 2 * qy) * src[1] + 2.0 * my * room[1] - mic[1]
                        ry = abs(my - qy) + abs(my)
                        for mz in range(-nz, nz + 1):
                            dz = (1 - 2 * qz) * src[2] + 2.0 * mz * room[2] - mic[2]
                            dist = math.sqrt(dx * dx + dy * dy + dz * dz)
                            n = int(round(dist * fs / c))
                            order = rx + ry + abs(mz - qz) + abs(mz)
                            if n >= length or order > max_order:
                                continue
                            amp[n, order] += 1.0 / (4.0 * math.pi * max(dist, 1e-3))


# reference receiver/source placement (fractions of the room size); deliberately asymmetric
_REF_MIC = np.array([0.37, 0.43, 0.52])
_REF_SRC = np.array([0.58, 0.61, 0.45])


@lru_cache(maxsize=256)
def _calibrated_reflection(room: tuple, t60: float, c: float) -> float:
    room_a = np.asarray(room, dtype=float)
    fs = 16000.0
    length = int(math.ceil(1.5 * t60 * fs))
    max_order = int(3.0 * (1.5 * t60 * c / min(room) + 2.0))
    amp = np.zeros((length, max_order + 1))
    _lattice_amplitudes(room_a * _REF_SRC, room_a * _REF_MIC, room_a, fs, c, length, amp)
    used = np.flatnonzero(amp.any(axis=0))
    amp = amp[:, :used[-1] + 1]
    orders = np.arange(amp.shape[1], dtype=float)
    t_idx = int(round(t60 * fs))

    def level(beta):
        h = amp @ (beta ** orders)
        tail = np.cumsum((h * h)[::-1])[::-1]
        return math.log(max(tail[t_idx], 1e-300) / tail[0]) + 6.0 * math.log(10.0)

    return float(brentq(level, 1e-3, 1.0 - 1e-9, xtol=1e-10))


def wall_reflection(room, t60: float, c: float = SPEED_OF_SOUND) -> float:
    """Uniform, frequency-independent reflection coefficient for a target T60.

    The request is checked against the Sabine absorption (infeasible when it
    exceeds 1). The coefficient itself is calibrated so that the reverberant
    energy of the room's image lattice decays by 60 dB after T60 seconds; a
    plain Sabine or Eyring coefficient leaves the shoebox tail too long.
    """
    if t60 <= 0.0:
        return 0.0
    sabine = sabine_absorption(room, t60, c)
    if sabine > 1.0:
        L, W, H = room
        raise SimulationError(f"T60={t60} s is infeasible for a {L}x{W}x{H} m room "
                              f"(Sabine absorption {sabine:.3f} > 1)")
    return _calibrated_reflection(tuple(float(v) for v in room), float(t60), float(c))


def rir_length(t60: float, fs: int = 16000) -> int:
    return max(6000, int(math.floor(fs * t60)))


@njit(cache=True)
def _image_sources(src, mic, room, beta, fs, c, length, half_width, out):
    max_dist = (length + half_width) * c / fs
    nx = int(math.ceil(max_dist / (2.0 * room[0]))) + 1
    ny = int(math.ceil(max_dist / (2.0 * room[1]))) + 1
    nz = int(math.ceil(max_dist / (2.0 * room[2]))) + 1
    taps = 2 * half_width + 1
    for qx in range(2):
        for qy in range(2):
            for qz in range(2):
                for mx in range(-nx, nx + 1):
                    dx = (1 - 2 * qx) * src[0] + 2.0 * mx * room[0] - mic[0]
                    rx = abs(mx - qx) + abs(mx)
                    for my in range(-ny, ny + 1):
                        dy = (1 - 2 * qy) * src[1] + 2.0 * my * room[1] - mic[1]
                        ry = abs(my - qy) + abs(my)
                        for mz in range(-nz, nz + 1):
                            dz = (1 - 2 * qz) * src[2] + 2.0 * mz * room[2] - mic[2]
                            dist = math.sqrt(dx * dx + dy * dy + dz * dz)
                            if dist > max_dist:
                                continue
                            order = rx + ry + abs(mz - qz) + abs(mz)
                            if order > 0 and beta == 0.0:
                                continue
                            gain = beta ** order / (4.0 * math.pi * max(dist, 1e-3))
                            delay = dist * fs / c
                            centre = int(math.floor(delay))
                            frac = delay - centre
                            start = centre - half_width
                            for k in range(taps):
                                n = start + k
                                if n < 0 or n >= length:
                                    continue
                                t = (k - half_width) - frac
                                if abs(t) < 1e-12:
                                    s = 1.0
                                else:
                                    s = math.sin(math.pi * t) / (math.pi * t)
                                w = 0.5 * (1.0 + math.cos(math.pi * t / (half_width + 1)))
                                out[n] += gain * s * w


def image_method_rir(room, src, mic, t60: float, length: int | None = None, fs: int = 16000,
                     c: float = SPEED_OF_SOUND, half_width: int = FRACTIONAL_HALF_WIDTH) -> np.ndarray:
    """Shoebox image-method impulse response with windowed-sinc fractional delays."""
    room = np.asarray(room, dtype=float)
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    for name, p in (("source", src), ("microphone", mic)):
        if np.any(p <= 0.0) or np.any(p >= room):
            raise SimulationError(f"{name} position {p.tolist()} is outside the room {room.tolist()}")
    if length is None:
        length = rir_length(t60, fs)
    beta = wall_reflection(room, t60, c)
    out = np.zeros(int(length))
    _image_sources(src, mic, room, float(beta), float(fs), float(c), int(length), int(half_width), out)
    return out


def schroeder_curve(rir: np.ndarray) -> np.ndarray:
    """Backward-integrated energy decay curve in dB (0 dB at the start)."""
    energy = np.cumsum(rir[::-1] ** 2)[::-1]
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(energy / energy[0])


def decay_time(rir: np.ndarray, fs: int, level_db: float = -60.0) -> float:
    """Time at which the Schroeder curve first drops below ``level_db``."""
    edc = schroeder_curve(rir)
    idx = np.flatnonzero(edc <= level_db)
    return (idx[0] if idx.size else len(rir)) / fs


# --------------------------------------------------------------------------- noise


def spherical_coherence(freqs: np.ndarray, distance, c: float = SPEED_OF_SOUND) -> np.ndarray:
    return np.sinc(2.0 * np.asarray(freqs) * distance / c)


def coherence_factor(gamma: np.ndarray) -> np.ndarray:
    """Per-bin factor ``C`` with ``C @ C.T = gamma``; lower Cholesky where possible."""
    p = gamma.shape[-1]
    try:
        return np.linalg.cholesky(gamma + 1e-10 * np.eye(p))
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(gamma)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))[..., None, :]


def diffuse_noise(noise: np.ndarray, mic_positions: np.ndarray, fs: int = 16000,
                  c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Impose the spherically isotropic coherence on P noise channels.

    ``noise`` is either ``(N,)`` or ``(P, N)``. A single channel is turned into
    P realizations by circular shifts of ``N/P`` samples. The mixing is applied
    per bin of one full-length FFT. Returns ``(P, N)``.
    """
    mics = np.asarray(mic_positions, dtype=float)
    P = mics.shape[0]
    noise = np.asarray(noise, dtype=float)
    if noise.ndim == 1:
        n = noise.size
        sources = np.stack([np.roll(noise, k * (n // P)) for k in range(P)])
    else:
        if noise.shape[0] != P:
            raise SimulationError(f"need {P} noise channels, got {noise.shape[0]}")
        sources = noise
    n = sources.shape[1]
    uniq, index = np.unique(np.round(mics, 9), axis=0, return_inverse=True)
    index = np.ravel(index)
    if uniq.shape[0] < P:
        # coincident microphones share one channel
        first = [int(np.flatnonzero(index == u)[0]) for u in range(uniq.shape[0])]
        return diffuse_noise(sources[first], mics[first], fs, c)[index]
    if P == 1:
        return sources.copy()
    spec = np.fft.rfft(sources, axis=-1)
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    dist = np.linalg.norm(mics[:, None, :] - mics[None, :, :], axis=-1)
    gamma = spherical_coherence(freqs[:, None, None], dist[None], c)  # (F, P, P)
    mix = coherence_factor(gamma)
    mixed = np.einsum("fpk,kf->pf", mix, spec)
    return np.fft.irfft(mixed, n=n, axis=-1)


def welch_coherence(a: np.ndarray, b: np.ndarray, fs: int, nperseg: int = 1024):
    """Complex coherence estimate; returns (freqs, coherence)."""
    from scipy.signal import csd, welch

    f, sab = csd(a, b, fs=fs, nperseg=nperseg)
    _, saa = welch(a, fs=fs, nperseg=nperseg)
    _, sbb = welch(b, fs=fs, nperseg=nperseg)
    return f, sab / np.sqrt(saa * sbb)


# --------------------------------------------------------------------------- sources


def speech_like(n: int, fs: int = 16000, rng: np.random.Generator | None = None,
                pauses: bool = True) -> np.ndarray:
    """Speech-like test signal: spectrally tilted noise, syllabic modulation, talk spurts."""
    rng = np.random.default_rng() if rng is None else rng
    if n <= 0:
        return np.zeros(0)
    white = rng.standard_normal(n)
    # -6 dB/oct tilt above a few hundred Hz plus a mild low cut
    tilted = lfilter([1.0, -0.95], [1.0, -2.0 * 0.97 * math.cos(2 * math.pi * 500 / fs), 0.97 ** 2], white)
    env_noise = rng.standard_normal(n)
    a = math.exp(-2 * math.pi * 4.0 / fs)
    env = np.abs(lfilter([1 - a], [1, -a], env_noise))
    env = lfilter([1 - a], [1, -a], env)
    env = env / (np.max(env) + 1e-12)
    sig = tilted * (0.2 + env)
    if pauses:
        gate = np.zeros(n)
        pos, on = 0, True
        while pos < n:
            dur = int(fs * (rng.uniform(0.6, 2.0) if on else rng.uniform(0.1, 0.5)))
            if on:
                gate[pos:pos + dur] = 1.0
            pos += dur
            on = not on
        ramp = int(0.01 * fs)
        gate = np.convolve(gate, np.ones(ramp) / ramp, mode="same")
        sig = sig * gate
    return sig / (np.std(sig) + 1e-12)


def pink_noise(n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    rng = np.random.default_rng() if rng is None else rng
    if n <= 0:
        return np.zeros(0)
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size, dtype=float)
    f[0] = 1.0
    sig = np.fft.irfft(spec / np.sqrt(f), n=n)
    return sig / np.std(sig)


# --------------------------------------------------------------------------- scenarios


def _spherical(az_deg: float, el_deg: float, r: float) -> np.ndarray:
    az, el = math.radians(az_deg), math.radians(el_deg)
    return r * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


def circular_array(center, diameter: float, channels: int) -> np.ndarray:
    center = np.asarray(center, dtype=float)
    ang = 2.0 * np.pi * np.arange(channels) / channels
    r = diameter / 2.0
    return center + np.stack([r * np.cos(ang), r * np.sin(ang), np.zeros(channels)], axis=1)


@dataclass
class ScenarioSpec:
    room: list
    t60: float
    array_center: list
    diameter: float
    loudspeaker: list
    talker: list
    seed: int
    ser_db: float
    snr_db: float
    onset_s: float
    channels: int = 4
    duration_s: float = 10.0
    sample_rate: int = 16000

    @property
    def mic_positions(self) -> np.ndarray:
        return circular_array(self.array_center, self.diameter, self.channels)

    def validate(self) -> None:
        room = np.asarray(self.room, dtype=float)
        pts = np.vstack([self.mic_positions, self.loudspeaker, self.talker])
        if np.any(pts < WALL_MARGIN - 1e-9) or np.any(pts > room - WALL_MARGIN + 1e-9):
            raise SimulationError("positions must keep a 0.1 m wall margin")

    def to_text(self) -> str:
        lines = [f"{k} = {json.dumps(v)}" for k, v in asdict(self).items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ScenarioSpec":
        kv = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise SimulationError(f"malformed scenario line: {raw!r}")
            kv[key.strip()] = json.loads(val)
        try:
            return cls(**kv)
        except TypeError as exc:
            raise SimulationError(f"bad scenario fields: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        return cls.from_text(Path(path).read_text())


def sample_scenario(seed: int, channels: int = 4, duration_s: float = 10.0,
                    sample_rate: int = 16000, max_tries: int = 1000) -> ScenarioSpec:
    """Deterministic draw of a scenario from the evaluation ranges."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2 ** 64 - 1), 0x5CE]))
    u = lambda key: float(rng.uniform(*RANGES[key]))  # noqa: E731
    room = [u("length"), u("width"), u("height")]
    t60 = u("t60")
    diameter = u("diameter")
    r = diameter / 2.0
    lo = np.array([WALL_MARGIN + r, WALL_MARGIN + r, WALL_MARGIN])
    hi = np.asarray(room) - lo
    for _ in range(max_tries):
        center = rng.uniform(lo, hi)
        ls = center + _spherical(u("azimuth_deg"), u("elevation_deg"), u("loudspeaker_distance"))
        tk = center + _spherical(u("azimuth_deg"), u("elevation_deg"), u("talker_distance"))
        pts = np.vstack([ls, tk])
        if np.all(pts >= WALL_MARGIN) and np.all(pts <= np.asarray(room) - WALL_MARGIN):
            break
    else:
        raise SimulationError(f"seed {seed}: could not place sources inside the room")
    spec = ScenarioSpec(
        room=room, t60=t60, array_center=center.tolist(), diameter=diameter,
        loudspeaker=ls.tolist(), talker=tk.tolist(), seed=int(seed),
        ser_db=u("ser_db"), snr_db=u("snr_db"), onset_s=u("onset_s"),
        channels=channels, duration_s=duration_s, sample_rate=sample_rate,
    )
    spec.validate()
    return spec


@dataclass
class SceneSignals:
    x: np.ndarray  # (N,)
    d: np.ndarray  # (P, N)
    s: np.ndarray
    n: np.ndarray
    y: np.ndarray
    h: np.ndarray  # (P, L) loudspeaker -> mic
    g: np.ndarray  # (P, L) talker -> mic
    s_ref: np.ndarray  # (N,)
    s_dry: np.ndarray = None
    onset: int = 0
    sample_rate: int = 16000
    spec: ScenarioSpec = field(default=None, repr=False)

    @property
    def components(self):
        return self.d, self.s, self.n


def _source_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2 ** 64 - 1), stream]))


def fractional_shift(sig: np.ndarray, shift: float) -> np.ndarray:
    """Delay ``sig`` by ``shift`` samples (negative advances) via a zero-padded FFT."""
    n = sig.size
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    spec = np.fft.rfft(sig, nfft)
    k = np.arange(spec.size)
    spec *= np.exp(-2j * np.pi * k * shift / nfft)
    return np.fft.irfft(spec, nfft)[:n]


def delay_and_sum(images: np.ndarray, delays_s: np.ndarray, fs: int) -> np.ndarray:
    """Align every channel to channel 0's propagation delay and average."""
    rel = (np.asarray(delays_s) - delays_s[0]) * fs
    return np.mean([fractional_shift(images[p], -rel[p]) for p in range(images.shape[0])], axis=0)


def _energy(sig: np.ndarray) -> float:
    return float(np.sum(np.asarray(sig, dtype=float) ** 2))


def synthesize_scene(spec: ScenarioSpec, dry_speech: np.ndarray | None = None,
                     loudspeaker_signal: np.ndarray | None = None, noise: np.ndarray | None = None,
                     talker_active: bool = True, noise_active: bool = True) -> SceneSignals:
    """Convolve, gate, level-align and mix one scenario. Missing sources are generated from the seed."""
    fs = spec.sample_rate
    N = int(round(spec.duration_s * fs))
    mics = spec.mic_positions
    P = mics.shape[0]
    if loudspeaker_signal is None:
        loudspeaker_signal = speech_like(N, fs, _source_rng(spec.seed, 1))
    if dry_speech is None:
        dry_speech = speech_like(N, fs, _source_rng(spec.seed, 2))
    if noise is None:
        noise = pink_noise(N, _source_rng(spec.seed, 3))
    x = _fit(loudspeaker_signal, N)
    s_dry = _fit(dry_speech, N).copy()
    onset = int(round(spec.onset_s * fs))
    s_dry[:min(onset, N)] = 0.0
    if not talker_active:
        s_dry[:] = 0.0
    length = rir_length(spec.t60, fs)
    h = np.stack([image_method_rir(spec.room, spec.loudspeaker, m, spec.t60, length, fs) for m in mics])
    g = np.stack([image_method_rir(spec.room, spec.talker, m, spec.t60, length, fs) for m in mics])
    if N == 0:
        empty = np.zeros((P, 0))
        return SceneSignals(x=x, d=empty, s=empty.copy(), n=empty.copy(), y=empty.copy(), h=h, g=g,
                            s_ref=np.zeros(0), s_dry=s_dry, onset=onset, sample_rate=fs, spec=spec)
    d = np.stack([fftconvolve(x, h[p])[:N] for p in range(P)])
    s = np.stack([fftconvolve(s_dry, g[p])[:N] for p in range(P)])
    e_d_active = _energy(d[0, onset:])
    e_s = _energy(s[0, onset:])
    if e_s > 0.0:
        s *= math.sqrt(e_d_active / (e_s * 10.0 ** (spec.ser_db / 10.0)))
    if noise_active and P >= 1:
        n = diffuse_noise(_fit(noise, N) if np.ndim(noise) == 1 else noise[:, :N], mics, fs)
        e_n = _energy(n[0])
        if e_n > 0.0:
            n *= math.sqrt(_energy(d[0]) / (e_n * 10.0 ** (spec.snr_db / 10.0)))
    else:
        n = np.zeros_like(d)
    y = d + s + n
    delays = np.linalg.norm(mics - np.asarray(spec.talker), axis=1) / SPEED_OF_SOUND
    s_ref = delay_and_sum(s, delays, fs)
    return SceneSignals(x=x, d=d, s=s, n=n, y=y, h=h, g=g, s_ref=s_ref, s_dry=s_dry,
                        onset=onset, sample_rate=fs, spec=spec)


def _fit(sig: np.ndarray, n: int) -> np.ndarray:
    sig = np.asarray(sig, dtype=float)
    if sig.size >= n:
        return sig[:n].copy()
    return np.pad(sig, (0, n - sig.size))


# --------------------------------------------------------------------------- files


def write_wav(path, data: np.ndarray, fs: int = 16000) -> None:
    data = np.asarray(data, dtype=np.float32)
    wavfile.write(str(path), fs, data.T if data.ndim == 2 else data)


def read_wav(path) -> tuple[np.ndarray, int]:
    """Returns ``(data, fs)`` with data shaped ``(channels, N)`` or ``(N,)``."""
    fs, data = wavfile.read(str(path))
    data = np.asarray(data)
    if data.dtype.kind == "i":
        data = data / float(np.iinfo(data.dtype).max)
    data = data.astype(np.float64)
    return (data.T if data.ndim == 2 else data), fs


SCENE_FILES = ("x", "y", "d", "s", "n", "s_ref")


def save_scene(scene: SceneSignals, directory) -> Path:
    """Write spec, WAVs (float32) and RIRs. ``y.wav`` holds the float32 sum of the stored components."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    fs = scene.sample_rate
    scene.spec.save(out / "scenario.txt")
    d32, s32, n32 = (np.asarray(a, dtype=np.float32) for a in scene.components)
    y32 = d32 + s32 + n32
    write_wav(out / "x.wav", scene.x, fs)
    write_wav(out / "d.wav", d32, fs)
    write_wav(out / "s.wav", s32, fs)
    write_wav(out / "n.wav", n32, fs)
    write_wav(out / "y.wav", y32, fs)
    write_wav(out / "s_ref.wav", scene.s_ref, fs)
    np.savez(out / "rirs.npz", h=scene.h, g=scene.g)
    return out


def load_scene(directory) -> SceneSignals:
    """Load a scenario directory. The mixture is rebuilt as ``d + s + n`` in double precision."""
    src = Path(directory)
    spec = ScenarioSpec.load(src / "scenario.txt")
    sig = {}
    fs = spec.sample_rate
    for name in SCENE_FILES:
        data, rate = read_wav(src / f"{name}.wav")
        if rate != fs:
            raise SimulationError(f"{name}.wav has rate {rate}, scenario says {fs}")
        sig[name] = data
    d, s, n = (np.atleast_2d(sig[k]) for k in ("d", "s", "n"))
    rirs = np.load(src / "rirs.npz")
    return SceneSignals(x=sig["x"], d=d, s=s, n=n, y=d + s + n, h=rirs["h"], g=rirs["g"],
                        s_ref=sig["s_ref"], onset=int(round(spec.onset_s * fs)), sample_rate=fs, spec=spec)
