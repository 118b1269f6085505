import numpy as np
import pytest
from hypothesis import given, strategies as st

from jointaec import frames
from jointaec.frames import ConfigurationError, FrameConfig


def naive_dft(x):
    m = len(x)
    n = np.arange(m)
    return np.array([np.sum(x * np.exp(-2j * np.pi * k * n / m)) for k in range(m)])


def test_defaults():
    c = FrameConfig()
    assert (c.R, c.M, c.F, c.P, c.sample_rate) == (1024, 2048, 1025, 4, 16000)
    assert c.block_duration == pytest.approx(0.064)


@pytest.mark.parametrize("kw", [{"frame_shift": 0}, {"channels": 0}, {"sample_rate": 0}])
def test_bad_config(kw):
    with pytest.raises(ConfigurationError):
        FrameConfig(**kw)


def test_num_blocks_pads_tail():
    c = FrameConfig(frame_shift=4)
    assert [c.num_blocks(n) for n in (0, 1, 4, 5, 8)] == [0, 1, 1, 2, 2]


def test_loudspeaker_block():
    assert np.array_equal(frames.make_loudspeaker_block(np.zeros(3), np.zeros(3)), np.zeros(6))
    assert np.array_equal(frames.make_loudspeaker_block([1, 2], [3, 4]), [1, 2, 3, 4])
    with pytest.raises(ConfigurationError):
        frames.make_loudspeaker_block([1, 2], [3])


def test_streaming_blocks_overlap_by_R(rng):
    R = 5
    x = rng.standard_normal(3 * R)
    blocks = list(frames.iter_blocks(x, R))
    padded = np.concatenate([np.zeros(R), x])
    for t, b in enumerate(blocks):
        expect = np.array([padded[t * R + i] for i in range(2 * R)])
        assert np.array_equal(b, expect)
    for a, b in zip(blocks, blocks[1:]):
        assert np.array_equal(a[R:], b[:R])


def test_dft_basics(rng):
    imp = np.zeros(8)
    imp[0] = 1
    assert np.allclose(frames.dft(imp), np.ones(8))
    x = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    assert np.max(np.abs(frames.idft(frames.dft(x)) - x)) < 1e-12
    y = rng.standard_normal(8)
    assert np.allclose(frames.dft(y), naive_dft(y), atol=1e-12)


def test_conjugate_symmetry(rng):
    X = frames.dft(rng.standard_normal(16))
    k = np.arange(1, 8)
    assert np.allclose(X[16 - k], np.conj(X[k]))
    half = np.fft.rfft(rng.standard_normal(16))
    full = frames.full_spectrum(half, 16)
    assert np.allclose(np.fft.ifft(full).imag, 0, atol=1e-14)


def test_padding_and_selection():
    assert np.array_equal(frames.constrain_to_last_R(np.array([1, 2, 3, 4])), [3, 4])
    assert np.array_equal(frames.constrain_to_last_R(np.zeros(6)), np.zeros(3))
    assert np.array_equal(frames.zero_pad_first_R(np.array([1, 2])), [1, 2, 0, 0])
    v = np.arange(5.0)
    assert np.array_equal(frames.zero_pad_first_R(v)[:5], v)


@given(st.integers(1, 64), st.integers(0, 2 ** 31 - 1))
def test_overlap_save_identity(R, seed):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(R)
    x = rng.standard_normal(4 * R)
    ref = np.convolve(h, x)[: 4 * R]
    H = frames.dft(frames.zero_pad_first_R(h))
    out = [frames.constrain_to_last_R(frames.idft(frames.dft(b) * H)).real for b in frames.iter_blocks(x, R)]
    got = np.concatenate(out)
    assert np.linalg.norm(got - ref) <= 1e-10 * np.linalg.norm(ref)


def test_projection_idempotent_and_equivalent(rng):
    M = 32
    S = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    once = frames.project_gradient(S)
    assert np.max(np.abs(frames.project_gradient(once) - once)) < 1e-12
    t = np.fft.ifft(S)
    t[M // 2:] = 0
    assert np.allclose(once, np.fft.fft(t), atol=1e-12)


@pytest.mark.parametrize("R", [4, 64, 1024])
def test_cola(R):
    b = frames.hamming_window(2 * R)
    bs = frames.synthesis_window(b, R)
    # interior samples see two overlapping frames
    total = b[:R] * bs[:R] + b[R:] * bs[R:]
    assert np.max(np.abs(total - 1.0)) < 1e-12


def test_periodic_hamming():
    w = frames.hamming_window(8)
    assert w[0] == pytest.approx(0.08)
    assert w[4] == pytest.approx(1.0)


def test_stft_analyze_cases(rng):
    R = 8
    w = frames.hamming_window(2 * R)
    assert np.allclose(frames.stft_analyze(np.zeros(R), np.zeros(R), w), 0)
    assert np.allclose(frames.stft_analyze(np.ones(R), np.ones(R), w), frames.dft(w))
    a, b = rng.standard_normal(R), rng.standard_normal(R)
    assert np.allclose(frames.stft_analyze(a, b, w), naive_dft(w * np.concatenate([a, b])), atol=1e-12)


def test_stft_round_trip(rng):
    R = 16
    x = rng.standard_normal(10 * R)
    spec = frames.stft_analyze_stream(x, R)
    y = frames.stft_synthesize(spec, R)
    assert y.shape == x.shape
    # the last block only has one frame contribution
    assert np.max(np.abs(y[: 9 * R] - x[: 9 * R])) < 1e-10
    assert np.array_equal(frames.stft_synthesize(np.zeros((5, 2 * R), complex)), np.zeros(5 * R))


def test_sinusoid_round_trip():
    R = 64
    n = np.arange(40 * R)
    x = 0.7 * np.sin(2 * np.pi * 0.05 * n)
    y = frames.stft_synthesize(frames.stft_analyze_stream(x, R), R)
    inner = slice(2 * R, 38 * R)
    assert abs(np.max(np.abs(y[inner])) - np.max(np.abs(x[inner]))) < 1e-6


def test_overlap_add_streaming_matches_batch(rng):
    R = 8
    x = rng.standard_normal(6 * R)
    spec = frames.stft_analyze_stream(x, R)
    ola = frames.OverlapAdd(R)
    pieces = [ola.push(s) for s in spec]
    assert np.allclose(pieces[0], 0.0, atol=1e-12)
    streamed = np.concatenate(pieces[1:] + [ola.flush()])
    assert np.allclose(streamed, frames.stft_synthesize(spec, R))
