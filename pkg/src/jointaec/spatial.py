"""Masked MVDR beamformer operating per STFT bin on the AEC error channels.

Arrays are batched over bins: CPSD matrices are ``(F, P, P)``, vectors ``(F, P)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import ConfigurationError

RTF_HOLD_THRESHOLD = 1e-12


@dataclass
class SpatialState:
    psd_interference: np.ndarray
    psd_speech: np.ndarray
    rtf: np.ndarray
    weights: np.ndarray
    lambda_z: float = 0.99
    lambda_s: float = 0.99
    delta1: float = 0.01
    delta2: float = 0.01
    failed_bins: np.ndarray = None

    def __post_init__(self):
        for name in ("lambda_z", "lambda_s"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1), got {v}")
        if self.delta1 < 0 or self.delta2 < 0:
            raise ConfigurationError("regularizers must be nonnegative")
        if self.failed_bins is None:
            self.failed_bins = np.zeros(self.rtf.shape[0], dtype=bool)

    @property
    def bins(self) -> int:
        return self.rtf.shape[0]

    @property
    def channels(self) -> int:
        return self.rtf.shape[1]


def init_state(bins: int, channels: int, lambda_z: float = 0.99, lambda_s: float = 0.99,
               delta1: float = 0.01, delta2: float = 0.01) -> SpatialState:
    """Zero CPSDs, all-ones RTF and a reference-microphone passthrough."""
    w = np.zeros((bins, channels), dtype=complex)
    w[:, 0] = 1.0
    return SpatialState(
        psd_interference=np.zeros((bins, channels, channels), dtype=complex),
        psd_speech=np.zeros((bins, channels, channels), dtype=complex),
        rtf=np.ones((bins, channels), dtype=complex),
        weights=w,
        lambda_z=lambda_z, lambda_s=lambda_s, delta1=delta1, delta2=delta2,
    )


def split_estimates(error: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interference and speech estimates ``((1-m) e, m e)``; both sum back to ``e``."""
    mask = np.clip(np.asarray(mask, dtype=float), 0.0, 1.0)
    s = mask * error
    return error - s, s


def _outer(v: np.ndarray) -> np.ndarray:
    return v[..., :, None] * np.conj(v[..., None, :])


def _hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def update_cpsd(state: SpatialState, z: np.ndarray, s: np.ndarray) -> SpatialState:
    lz, ls = state.lambda_z, state.lambda_s
    state.psd_interference = _hermitize(lz * state.psd_interference + (1.0 - lz) * _outer(z))
    state.psd_speech = _hermitize(ls * state.psd_speech + (1.0 - ls) * _outer(s))
    return state


def power_iteration_step(psd: np.ndarray, rtf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One reference-normalized power iteration; returns (new rtf, held-bin flags)."""
    a = np.einsum("...ij,...j->...i", psd, rtf)
    ref = a[..., 0]
    held = np.abs(ref) < RTF_HOLD_THRESHOLD
    safe = np.where(held, 1.0, ref)
    a = a / safe[..., None]
    a[..., 0] = 1.0
    a = np.where(held[..., None], rtf, a)
    return a, held


def update_rtf(state: SpatialState) -> SpatialState:
    state.rtf, _ = power_iteration_step(state.psd_speech, state.rtf)
    return state


def _cholesky_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a x = b`` for batched Hermitian positive definite ``a`` (..., P, P)."""
    L = np.linalg.cholesky(a)
    p = a.shape[-1]
    y = np.empty_like(b)
    for i in range(p):
        acc = b[..., i] - np.einsum("...k,...k->...", L[..., i, :i], y[..., :i])
        y[..., i] = acc / L[..., i, i]
    x = np.empty_like(b)
    for i in reversed(range(p)):
        acc = y[..., i] - np.einsum("...k,...k->...", np.conj(L[..., i + 1:, i]), x[..., i + 1:])
        x[..., i] = acc / np.conj(L[..., i, i])
    return x


def mvdr_solve(psd_interference: np.ndarray, rtf: np.ndarray, delta1: float, delta2: float):
    """Regularized MVDR weights; returns ``(weights, ok)`` with ``ok`` false for failed bins."""
    psd = np.asarray(psd_interference)
    p = psd.shape[-1]
    a = psd + delta1 * np.eye(p)
    rtf = np.asarray(rtf, dtype=complex)
    try:
        b = _cholesky_solve(a, rtf)
    except np.linalg.LinAlgError:
        flat_a = a.reshape(-1, p, p)
        flat_r = rtf.reshape(-1, p)
        b = np.full_like(flat_r, np.nan)
        for k in range(flat_a.shape[0]):
            try:
                b[k] = _cholesky_solve(flat_a[k], flat_r[k])
            except np.linalg.LinAlgError:
                pass
        b = b.reshape(rtf.shape)
    denom = np.einsum("...i,...i->...", np.conj(rtf), b) + delta2
    with np.errstate(divide="ignore", invalid="ignore"):
        w = b / denom[..., None]
    ok = np.all(np.isfinite(w), axis=-1)
    return w, ok


def mvdr_weights(state: SpatialState) -> SpatialState:
    w, ok = mvdr_solve(state.psd_interference, state.rtf, state.delta1, state.delta2)
    state.weights = np.where(ok[:, None], w, state.weights)
    state.failed_bins = ~ok
    return state


def apply_beamformer(weights: np.ndarray, error: np.ndarray) -> np.ndarray:
    """``w^H e`` per bin. ``error`` is ``(F, P)`` or ``(..., F, P)``."""
    return np.einsum("fi,...fi->...f", np.conj(weights), error)


def process_block(state: SpatialState, error: np.ndarray, mask: np.ndarray | None = None,
                  z: np.ndarray | None = None, s: np.ndarray | None = None) -> np.ndarray:
    """Split, CPSD update, one RTF step, weights, output for one block.

    ``error`` is ``(F, P)``; ``mask`` is ``(P, F)``. When ``z`` and ``s`` are
    supplied they replace the masked estimates (oracle CPSD tracking).
    """
    if z is None or s is None:
        if mask is None:
            raise ConfigurationError("either a beamformer mask or direct estimates are required")
        z, s = split_estimates(error, np.asarray(mask).T)
    update_cpsd(state, z, s)
    update_rtf(state)
    mvdr_weights(state)
    return apply_beamformer(state.weights, error)
