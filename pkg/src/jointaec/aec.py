"""Multichannel frequency-domain adaptive filter (overlap-save, constrained update).

Every microphone has its own length-R FIR echo path estimate; all of them are
driven by the same loudspeaker block. Filters are stored as F = R + 1 bin half
spectra, which is the same thing as the length-M DFT of a real zero-padded FIR
filter with the upper bins given by conjugate symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frames import ConfigurationError, FrameConfig, full_spectrum

EPS_STEP = 1e-10


class NumericFault(RuntimeError):
    """Non-finite data reached an adaptive update; the state was left untouched."""


@dataclass
class StepSizeMasks:
    m_mu: np.ndarray
    m_aec: np.ndarray

    def __post_init__(self):
        self.m_mu = np.clip(np.asarray(self.m_mu, dtype=float), 0.0, 1.0)
        self.m_aec = np.clip(np.asarray(self.m_aec, dtype=float), 0.0, 1.0)


@dataclass
class AecState:
    config: FrameConfig
    filters: np.ndarray = None  # (P, F) complex half spectra
    loudspeaker_psd: np.ndarray = None  # (F,)
    lambda_x: float = 0.5
    prev_x: np.ndarray = None  # (R,)
    psd_initialized: bool = False
    frozen: bool = False
    blocks: int = 0

    def __post_init__(self):
        c = self.config
        if self.filters is None:
            self.filters = np.zeros((c.P, c.F), dtype=complex)
        if self.loudspeaker_psd is None:
            self.loudspeaker_psd = np.zeros(c.F)
        if self.prev_x is None:
            self.prev_x = np.zeros(c.R)
        if not 0.0 < self.lambda_x < 1.0:
            raise ConfigurationError(f"lambda_x must lie in (0, 1), got {self.lambda_x}")

    def filter_taps(self) -> np.ndarray:
        """Time-domain filters, shape (P, M); the last R taps stay zero."""
        return np.fft.irfft(self.filters, n=self.config.M, axis=-1)

    def full_filters(self) -> np.ndarray:
        """Length-M DFT-domain filters, shape (P, M)."""
        return full_spectrum(self.filters, self.config.M)

    def copy(self) -> "AecState":
        return AecState(self.config, self.filters.copy(), self.loudspeaker_psd.copy(), self.lambda_x,
                        self.prev_x.copy(), self.psd_initialized, self.frozen, self.blocks)


def init_state(config: FrameConfig, lambda_x: float = 0.5) -> AecState:
    return AecState(config, lambda_x=lambda_x)


def state_from_taps(config: FrameConfig, taps: np.ndarray, frozen: bool = False,
                    lambda_x: float = 0.5) -> AecState:
    """AEC state whose filters are the first R taps of the given impulse responses."""
    taps = np.atleast_2d(np.asarray(taps, dtype=float))
    if taps.shape[0] != config.P:
        raise ConfigurationError(f"expected {config.P} impulse responses, got {taps.shape[0]}")
    h = np.zeros((config.P, config.M))
    n = min(config.R, taps.shape[1])
    h[:, :n] = taps[:, :n]
    st = AecState(config, lambda_x=lambda_x, frozen=frozen)
    st.filters = np.fft.rfft(h, axis=-1)
    return st


def loudspeaker_spectrum(x_block: np.ndarray) -> np.ndarray:
    return np.fft.rfft(np.asarray(x_block, dtype=float), axis=-1)


def estimate_echo(state: AecState, x_block: np.ndarray, X: np.ndarray | None = None) -> np.ndarray:
    """Overlap-save echo estimate for every microphone, shape (P, R)."""
    if X is None:
        X = loudspeaker_spectrum(x_block)
    y = np.fft.irfft(X[None, :] * state.filters, n=state.config.M, axis=-1)
    return y[:, state.config.R:]


def compute_error(mic: np.ndarray, echo_est: np.ndarray) -> np.ndarray:
    mic = np.asarray(mic, dtype=float)
    if mic.shape != np.shape(echo_est):
        raise ConfigurationError(f"shape mismatch {mic.shape} vs {np.shape(echo_est)}")
    return mic - echo_est


def error_spectrum(error_innovations: np.ndarray) -> np.ndarray:
    """Half spectra of the error blocks zero-padded in front, shape (P, F)."""
    e = np.atleast_2d(error_innovations)
    padded = np.concatenate([np.zeros_like(e), e], axis=-1)
    return np.fft.rfft(padded, axis=-1)


def update_loudspeaker_psd(state: AecState, x_block: np.ndarray | None = None,
                           X: np.ndarray | None = None) -> AecState:
    if X is None:
        X = loudspeaker_spectrum(x_block)
    power = np.abs(X) ** 2
    if not state.psd_initialized:
        state.loudspeaker_psd = power
        state.psd_initialized = True
    else:
        state.loudspeaker_psd = state.lambda_x * state.loudspeaker_psd + (1.0 - state.lambda_x) * power
    return state


def step_size(state: AecState, masks: StepSizeMasks, error_spec: np.ndarray) -> np.ndarray:
    """Mask-controlled, PSD-normalized step size for one or all microphones."""
    c = state.config
    denom = state.loudspeaker_psd + (c.M / c.R) * np.abs(masks.m_aec * error_spec) ** 2 + EPS_STEP
    return masks.m_mu / denom


def update_filters(state: AecState, X: np.ndarray, error_spec: np.ndarray, mu: np.ndarray) -> AecState:
    """Constrained gradient step ``h += Q3(mu * conj(X) * E)`` for all microphones."""
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(error_spec)) and np.all(np.isfinite(mu))):
        raise NumericFault("non-finite input to AEC filter update")
    c = state.config
    grad = np.conj(X)[None, :] * error_spec
    t = np.fft.irfft(mu * grad, n=c.M, axis=-1)
    t[:, c.R:] = 0.0
    step = np.fft.rfft(t, axis=-1)
    new = state.filters + step
    if not np.all(np.isfinite(new)):
        raise NumericFault("AEC filter update produced non-finite coefficients")
    state.filters = new
    return state


@dataclass
class AecBlockResult:
    error: np.ndarray  # (P, R)
    echo_estimate: np.ndarray  # (P, R)
    error_spectra: np.ndarray  # (P, F)
    step_sizes: np.ndarray = field(default=None)  # (P, F)


def process_block(state: AecState, x_in: np.ndarray, y_in: np.ndarray, masks: StepSizeMasks) -> AecBlockResult:
    """One full AEC block: estimate, error, PSD, step size, filter update."""
    c = state.config
    x_in = np.asarray(x_in, dtype=float)
    y_in = np.asarray(y_in, dtype=float)
    if x_in.shape != (c.R,) or y_in.shape != (c.P, c.R):
        raise ConfigurationError(f"AEC block expects x {(c.R,)} and y {(c.P, c.R)}, "
                                 f"got {x_in.shape} and {y_in.shape}")
    if not (np.all(np.isfinite(x_in)) and np.all(np.isfinite(y_in))):
        raise NumericFault("non-finite samples in AEC input block")
    x_block = np.concatenate([state.prev_x, x_in])
    X = loudspeaker_spectrum(x_block)
    d_hat = estimate_echo(state, x_block, X)
    e = compute_error(y_in, d_hat)
    E = error_spectrum(e)
    update_loudspeaker_psd(state, X=X)
    mu = step_size(state, masks, E)
    if not state.frozen:
        update_filters(state, X, E, mu)
    state.prev_x = x_in.copy()
    state.blocks += 1
    return AecBlockResult(e, d_hat, E, mu)


def misalignment(state: AecState, true_taps: np.ndarray) -> np.ndarray:
    """Normalized filter misalignment ||h - h_hat|| / ||h|| per microphone."""
    true_taps = np.atleast_2d(true_taps)
    est = state.filter_taps()
    n = max(true_taps.shape[1], est.shape[1])
    a = np.zeros((true_taps.shape[0], n))
    b = np.zeros_like(a)
    a[:, :true_taps.shape[1]] = true_taps
    b[:, :est.shape[1]] = est
    return np.linalg.norm(a - b, axis=1) / np.linalg.norm(a, axis=1)
