"""Streaming AEC -> STFT -> MVDR -> postfilter chain with component shadow processing.

The mixture and its echo/speech/noise components are pushed through the same
time-varying linear operators in the same block: the echo component absorbs the
AEC subtraction, speech and noise pass the subtraction stage untouched, and all
of them see the mixture's beamformer weights and postfilter mask. Outputs at
every tap point are therefore exactly additive over the components.

Taps are aligned to the input time axis: the AEC tap of block ``t`` is
available after block ``t``, BF/PF taps one block later (synthesis latency).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import aec, spatial
from .control import BeamformedContext, MaskProvider, MaskSet, OracleContext, quantize
from .frames import ConfigurationError, FrameConfig, hamming_window, synthesis_window

TAPS = ("aec", "bf", "pf")
COMPONENTS = ("echo", "speech", "noise")


@dataclass(frozen=True)
class Params:
    lambda_x: float = 0.5
    lambda_z: float = 0.99
    lambda_s: float = 0.99
    delta1: float = 0.01
    delta2: float = 0.01


@dataclass
class BlockOutput:
    tau: int
    aec: np.ndarray  # (C, R) first-mic error for block tau
    bf: np.ndarray | None  # (C, R) BF output for block tau-1, None at tau = 0
    pf: np.ndarray | None
    masks: MaskSet
    elapsed: float


@dataclass
class PipelineOutput:
    u_pf: np.ndarray
    u_bf: np.ndarray
    e_first_mic: np.ndarray
    component_outputs: dict = field(default_factory=dict)  # tap -> component -> signal
    masks: list = field(default_factory=list)
    block_times: np.ndarray = None
    aec_state: aec.AecState = None
    spatial_state: spatial.SpatialState = None

    def tap(self, name: str) -> np.ndarray:
        return {"aec": self.e_first_mic, "bf": self.u_bf, "pf": self.u_pf}[name]


class Pipeline:
    """Per-stream state machine; call :meth:`process_block` once per innovation block."""

    def __init__(self, config: FrameConfig, provider: MaskProvider, aec_state: aec.AecState | None = None,
                 params: Params | None = None, record_masks: bool = False):
        self.config = config
        self.provider = provider
        self.params = params or Params()
        p = self.params
        self.aec = aec_state if aec_state is not None else aec.init_state(config, p.lambda_x)
        if self.aec.config != config:
            raise ConfigurationError("AEC state was built for a different frame configuration")
        self.spatial = spatial.init_state(config.F, config.P, p.lambda_z, p.lambda_s, p.delta1, p.delta2)
        self.window = hamming_window(config.M)
        self.syn = synthesis_window(self.window, config.R)
        self.record_masks = record_masks
        self.masks: list[MaskSet] = []
        self.tau = 0
        self._prev_err = None
        self._tail = None

    def _buffers(self, n_signals: int):
        c = self.config
        if self._prev_err is None:
            self._prev_err = np.zeros((n_signals, c.P, c.R))
            self._tail = np.zeros((2, n_signals, c.R))
        elif self._prev_err.shape[0] != n_signals:
            raise ConfigurationError("components must be supplied for every block or for none")

    def process_block(self, x_in: np.ndarray, y_in: np.ndarray, components: np.ndarray | None = None) -> BlockOutput:
        """Process one block.

        ``components`` is ``(3, P, R)`` holding the echo, speech and noise images
        of this block; signal index 0 of every output is the mixture, 1..3 the
        components in that order.
        """
        t0 = time.perf_counter()
        c = self.config
        tau = self.tau
        prov = self.provider
        if prov.needs_oracle and components is None:
            raise ConfigurationError("this mask provider needs the component images")
        n_sig = 1 if components is None else 4
        self._buffers(n_sig)

        m_mu, m_aec = (quantize(m) for m in prov.aec_masks(tau))
        step = aec.StepSizeMasks(m_mu, m_aec)
        res = aec.process_block(self.aec, x_in, y_in, step)

        err = np.empty((n_sig, c.P, c.R))
        err[0] = res.error
        if components is not None:
            components = np.asarray(components, dtype=float)
            if components.shape != (3, c.P, c.R):
                raise ConfigurationError(f"components must have shape {(3, c.P, c.R)}")
            err[1] = components[0] - res.echo_estimate
            err[2:] = components[1:]

        blocks = np.concatenate([self._prev_err, err], axis=-1)
        self._prev_err = err
        spec = np.fft.rfft(self.window * blocks, axis=-1)  # (n_sig, P, F)

        ctx = None
        if components is not None:
            ctx = OracleContext(spec[1], spec[2], spec[3])
        m_bf = quantize(np.atleast_2d(prov.bf_mask(tau, ctx)))

        error_fp = spec[0].T
        if prov.direct_cpsd:
            z = (spec[1] + spec[3]).T
            s = spec[2].T
            spatial.update_cpsd(self.spatial, z, s)
        else:
            z, s = spatial.split_estimates(error_fp, m_bf.T)
            spatial.update_cpsd(self.spatial, z, s)
        spatial.update_rtf(self.spatial)
        spatial.mvdr_weights(self.spatial)
        u_bf = spatial.apply_beamformer(self.spatial.weights, np.swapaxes(spec, -1, -2))  # (n_sig, F)

        bctx = None
        if components is not None:
            bctx = BeamformedContext(u_bf[1], u_bf[2], u_bf[3])
        m_pf = prov.pf_mask(tau, bctx)
        masks = MaskSet(m_mu, m_aec, m_bf, m_pf)
        u_pf = masks.m_pf * u_bf

        frames = np.fft.irfft(np.stack([u_bf, u_pf]), n=c.M, axis=-1) * self.syn  # (2, n_sig, M)
        done = self._tail + frames[..., :c.R]
        self._tail = frames[..., c.R:].copy()

        if self.record_masks:
            self.masks.append(masks)
        self.tau += 1
        aec_tap = err[:, 0, :].copy()
        bf = pf = None
        if tau > 0:
            bf, pf = done[0], done[1]
        return BlockOutput(tau, aec_tap, bf, pf, masks, time.perf_counter() - t0)

    def flush(self) -> tuple[np.ndarray, np.ndarray]:
        """Partially reconstructed BF/PF samples of the last processed block."""
        tail = self._tail
        self._tail = np.zeros_like(tail)
        return tail[0], tail[1]


def _pad(sig: np.ndarray, n: int) -> np.ndarray:
    if sig.shape[-1] == n:
        return sig
    pad = [(0, 0)] * (sig.ndim - 1) + [(0, n - sig.shape[-1])]
    return np.pad(sig, pad)


def process_stream(x: np.ndarray, y: np.ndarray, config: FrameConfig, provider: MaskProvider,
                   components: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
                   aec_state: aec.AecState | None = None, params: Params | None = None,
                   record_masks: bool = False, strict: bool = True) -> PipelineOutput:
    """Run a whole stream block by block.

    ``components`` is ``(d, s, n)``, each ``(P, N)``. With ``strict`` a
    provider that cannot cover the stream is rejected up front; otherwise the
    stream ends where the provider runs out.
    """
    x = np.asarray(x, dtype=float)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = x.shape[-1]
    if y.shape != (config.P, n):
        raise ConfigurationError(f"microphone signals must be {(config.P, n)}, got {y.shape}")
    comp = None
    if components is not None:
        comp = np.stack([np.atleast_2d(np.asarray(a, dtype=float)) for a in components])
        if comp.shape != (3, config.P, n):
            raise ConfigurationError(f"components must be 3 x {(config.P, n)}, got {comp.shape}")
    R = config.R
    n_blocks = config.num_blocks(n)
    if strict:
        provider.check_stream(n_blocks)
    total = n_blocks * R
    x_p, y_p = _pad(x, total), _pad(y, total)
    comp_p = None if comp is None else _pad(comp, total)

    pipe = Pipeline(config, provider, aec_state, params, record_masks)
    n_sig = 1 if comp is None else 4
    out = {tap: np.zeros((n_sig, total)) for tap in TAPS}
    times = []
    processed = 0
    for tau in range(n_blocks):
        if provider.exhausted(tau):
            break
        sl = slice(tau * R, (tau + 1) * R)
        cb = None if comp_p is None else comp_p[:, :, sl]
        res = pipe.process_block(x_p[sl], y_p[:, sl], cb)
        out["aec"][:, sl] = res.aec
        if res.bf is not None:
            prev = slice((tau - 1) * R, tau * R)
            out["bf"][:, prev] = res.bf
            out["pf"][:, prev] = res.pf
        times.append(res.elapsed)
        processed += 1
    if processed:
        last = slice((processed - 1) * R, processed * R)
        out["bf"][:, last], out["pf"][:, last] = pipe.flush()
    length = min(n, processed * R)
    out = {k: v[:, :length] for k, v in out.items()}
    comps = {}
    if comp is not None:
        comps = {tap: {name: out[tap][i + 1] for i, name in enumerate(COMPONENTS)} for tap in TAPS}
    return PipelineOutput(
        u_pf=out["pf"][0], u_bf=out["bf"][0], e_first_mic=out["aec"][0],
        component_outputs=comps, masks=pipe.masks, block_times=np.asarray(times),
        aec_state=pipe.aec, spatial_state=pipe.spatial,
    )
