"""Block framing, DFT helpers, overlap-save constraints and the 50 % overlap STFT.

Conventions used throughout the package:

* blocks of length ``M = 2R`` are built from two innovation blocks ``[prev; cur]``
* the forward DFT is unnormalized, the inverse carries the ``1/M`` factor
* all reference computations run in double precision
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised for inconsistent frame/block geometry."""


@dataclass(frozen=True)
class FrameConfig:
    frame_shift: int = 1024
    channels: int = 4
    sample_rate: int = 16000

    def __post_init__(self):
        if self.frame_shift < 1:
            raise ConfigurationError(f"frame_shift must be >= 1, got {self.frame_shift}")
        if self.channels < 1:
            raise ConfigurationError(f"channels must be >= 1, got {self.channels}")
        if self.sample_rate <= 0:
            raise ConfigurationError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def R(self) -> int:
        return self.frame_shift

    @property
    def block_length(self) -> int:
        return 2 * self.frame_shift

    M = block_length

    @property
    def bins(self) -> int:
        return self.frame_shift + 1

    F = bins

    @property
    def P(self) -> int:
        return self.channels

    @property
    def block_duration(self) -> float:
        return self.frame_shift / self.sample_rate

    def num_blocks(self, n_samples: int) -> int:
        """Number of innovation blocks needed to cover ``n_samples`` (tail zero-padded)."""
        return -(-int(n_samples) // self.frame_shift)


def _check_len(x: np.ndarray, n: int, what: str) -> None:
    if x.shape[-1] != n:
        raise ConfigurationError(f"{what}: expected length {n}, got {x.shape[-1]}")


def make_loudspeaker_block(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """Concatenate two innovation blocks into one length-``2R`` block."""
    prev = np.asarray(prev)
    cur = np.asarray(cur)
    if prev.shape != cur.shape:
        raise ConfigurationError(f"innovation blocks differ in shape: {prev.shape} vs {cur.shape}")
    return np.concatenate([prev, cur], axis=-1)


def iter_innovation_blocks(signal: np.ndarray, frame_shift: int) -> Iterator[np.ndarray]:
    """Yield consecutive length-R blocks along the last axis, zero-padding the tail."""
    signal = np.asarray(signal)
    n = signal.shape[-1]
    for start in range(0, n, frame_shift):
        block = signal[..., start:start + frame_shift]
        if block.shape[-1] < frame_shift:
            pad = [(0, 0)] * (signal.ndim - 1) + [(0, frame_shift - block.shape[-1])]
            block = np.pad(block, pad)
        yield block


def iter_blocks(signal: np.ndarray, frame_shift: int) -> Iterator[np.ndarray]:
    """Yield the overlapping length-2R blocks ``[x_{t-1}; x_t]`` of a stream (x_{-1} = 0)."""
    signal = np.asarray(signal)
    prev = np.zeros(signal.shape[:-1] + (frame_shift,), dtype=signal.dtype)
    for cur in iter_innovation_blocks(signal, frame_shift):
        yield make_loudspeaker_block(prev, cur)
        prev = cur


def dft(block: np.ndarray) -> np.ndarray:
    """Unnormalized length-M DFT along the last axis."""
    return np.fft.fft(block, axis=-1)


def idft(spectrum: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dft` (carries the 1/M factor)."""
    return np.fft.ifft(spectrum, axis=-1)


def constrain_to_last_R(time_block: np.ndarray) -> np.ndarray:
    """Keep the last half of a length-M block; the first half is circular-convolution garbage."""
    n = time_block.shape[-1]
    if n % 2:
        raise ConfigurationError(f"block length must be even, got {n}")
    return time_block[..., n // 2:]


def zero_pad_first_R(block: np.ndarray) -> np.ndarray:
    """Place a length-R block in the first half of a zero length-2R block."""
    block = np.asarray(block)
    return np.concatenate([block, np.zeros_like(block)], axis=-1)


def zero_pad_last_R(block: np.ndarray) -> np.ndarray:
    """Place a length-R block in the second half of a zero length-2R block."""
    block = np.asarray(block)
    return np.concatenate([np.zeros_like(block), block], axis=-1)


def project_gradient(spectrum: np.ndarray) -> np.ndarray:
    """Gradient constraint: zero the last R time-domain samples of a length-M spectrum."""
    t = idft(spectrum)
    t[..., t.shape[-1] // 2:] = 0.0
    return dft(t)


def hamming_window(length: int) -> np.ndarray:
    """Periodic Hamming window."""
    n = np.arange(length)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / length)


def synthesis_window(analysis: np.ndarray, hop: int) -> np.ndarray:
    """Least-squares dual window of ``analysis`` for overlap-add at ``hop``."""
    analysis = np.asarray(analysis, dtype=float)
    m = analysis.size
    if m % hop:
        raise ConfigurationError(f"window length {m} is not a multiple of hop {hop}")
    energy = np.zeros(m)
    for k in range(m // hop):
        energy += np.roll(analysis ** 2, k * hop)
    return analysis / energy


def stft_analyze(prev: np.ndarray, cur: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Windowed length-M DFT of the block ``[prev; cur]``."""
    block = make_loudspeaker_block(prev, cur)
    _check_len(block, window.shape[-1], "stft_analyze")
    return dft(window * block)


def stft_analyze_stream(signal: np.ndarray, frame_shift: int, window: np.ndarray | None = None) -> np.ndarray:
    """STFT of a whole stream at hop R; frame ``t`` analyzes samples ``[(t-1)R, (t+1)R)``.

    Returns an array of shape ``(..., n_blocks, M)``.
    """
    if window is None:
        window = hamming_window(2 * frame_shift)
    blocks = list(iter_blocks(signal, frame_shift))
    if not blocks:
        return np.zeros(np.shape(signal)[:-1] + (0, 2 * frame_shift), dtype=complex)
    return dft(window * np.stack(blocks, axis=-2))


class OverlapAdd:
    """Streaming weighted overlap-add synthesis at hop R.

    :meth:`push` takes the length-M spectrum of frame ``t`` and returns the R
    finished samples of innovation block ``t-1`` (near zero for ``t = 0``,
    which covers negative time). :meth:`flush` returns the partially
    reconstructed last block.
    """

    def __init__(self, frame_shift: int, window: np.ndarray | None = None, real: bool = True):
        self.R = frame_shift
        if window is None:
            window = hamming_window(2 * frame_shift)
        self.syn = synthesis_window(window, frame_shift)
        self.real = real
        self._tail = np.zeros(frame_shift)
        self._count = 0

    def push_time(self, frame: np.ndarray) -> np.ndarray:
        """Like :meth:`push` but for an already inverse-transformed length-M frame."""
        frame = frame * self.syn
        out = self._tail + frame[: self.R]
        self._tail = frame[self.R:].copy()
        self._count += 1
        return out

    def push(self, spectrum: np.ndarray) -> np.ndarray:
        t = idft(spectrum)
        return self.push_time(t.real if self.real else t)

    def flush(self) -> np.ndarray:
        out = self._tail
        self._tail = np.zeros_like(out)
        return out


def stft_synthesize(frames: Sequence[np.ndarray] | np.ndarray, frame_shift: int | None = None,
                    window: np.ndarray | None = None) -> np.ndarray:
    """Overlap-add synthesis of hop-R frames produced like :func:`stft_analyze_stream`.

    The output is aligned with the analyzed stream: ``len(frames) * R`` samples,
    where the last block is only partially reconstructed.
    """
    frames = list(frames) if not isinstance(frames, np.ndarray) else frames
    if len(frames) == 0:
        return np.zeros(0)
    m = len(frames[0])
    if frame_shift is None:
        frame_shift = m // 2
    ola = OverlapAdd(frame_shift, window)
    pieces = [ola.push(f) for f in frames]
    pieces = pieces[1:] + [ola.flush()]
    return np.concatenate(pieces)


def full_spectrum(half: np.ndarray, M: int) -> np.ndarray:
    """Complete an F = M/2+1 bin half spectrum to length M by conjugate symmetry."""
    half = np.asarray(half)
    tail = np.conj(half[..., 1:M - M // 2][..., ::-1])
    return np.concatenate([half, tail], axis=-1)


def stack_blocks(blocks: Iterable[np.ndarray]) -> np.ndarray:
    blocks = list(blocks)
    if not blocks:
        return np.zeros(0)
    return np.concatenate(blocks, axis=-1)
