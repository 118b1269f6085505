"""Mask providers that drive the AEC step size, beamformer and postfilter.

A provider is queried in three stages per block because the oracle masks
depend on intermediate signals:

1. :meth:`MaskProvider.aec_masks` before the AEC runs,
2. :meth:`MaskProvider.bf_mask` once the error spectra exist,
3. :meth:`MaskProvider.pf_mask` once the beamformer output exists.

All emitted values are clamped to [0, 1] and rounded to float32 so that a
stream written with :func:`write_mask_file` replays bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .frames import ConfigurationError, FrameConfig

RATIO_EPS = 1e-12
MAGIC = b"EFMK"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class MaskFileError(ValueError):
    """Base class for mask-file load errors."""


class MaskHeaderError(MaskFileError):
    pass


class MaskShapeError(MaskFileError):
    pass


class MaskLengthError(MaskFileError):
    pass


def quantize(values, clamp_counter: list | None = None) -> np.ndarray:
    """Clamp to [0, 1] and round to float32 precision (returned as float64)."""
    v = np.asarray(values, dtype=float)
    if clamp_counter is not None:
        clamp_counter[0] += int(np.count_nonzero((v < 0.0) | (v > 1.0) | np.isnan(v)))
    v = np.clip(np.nan_to_num(v, nan=0.0), 0.0, 1.0)
    return v.astype(np.float32).astype(np.float64)


@dataclass
class MaskSet:
    m_mu: np.ndarray  # (F,)
    m_aec: np.ndarray  # (F,)
    m_bf: np.ndarray  # (P, F)
    m_pf: np.ndarray  # (F,)

    def __post_init__(self):
        self.m_mu = quantize(self.m_mu)
        self.m_aec = quantize(self.m_aec)
        self.m_bf = quantize(np.atleast_2d(self.m_bf))
        self.m_pf = quantize(self.m_pf)

    def check_shape(self, config: FrameConfig) -> None:
        F, P = config.F, config.P
        if self.m_mu.shape != (F,) or self.m_aec.shape != (F,) or self.m_pf.shape != (F,) \
                or self.m_bf.shape != (P, F):
            raise MaskShapeError(f"mask set does not match P={P}, F={F}")


@dataclass
class OracleContext:
    """STFT spectra of the true components at the error point, each ``(P, F)``."""
    residual_echo: np.ndarray
    speech: np.ndarray
    noise: np.ndarray

    @property
    def interference(self) -> np.ndarray:
        return self.residual_echo + self.noise


@dataclass
class BeamformedContext:
    """Beamformer-output spectra of the true components, each ``(F,)``."""
    residual_echo: np.ndarray
    speech: np.ndarray
    noise: np.ndarray

    @property
    def interference(self) -> np.ndarray:
        return self.residual_echo + self.noise


def ratio_mask(target: np.ndarray, interference: np.ndarray, eps: float = RATIO_EPS) -> np.ndarray:
    a = np.abs(target)
    return np.clip(a / (a + np.abs(interference) + eps), 0.0, 1.0)


def oracle_bf_mask(ctx: OracleContext) -> np.ndarray:
    return ratio_mask(ctx.speech, ctx.interference)


def oracle_pf_mask(ctx: BeamformedContext) -> np.ndarray:
    return ratio_mask(ctx.speech, ctx.interference)


class MaskProvider:
    """Base provider: subclasses override the three stages."""

    #: When true, the beamformer tracks CPSDs from the true component spectra.
    direct_cpsd = False
    #: When true, the pipeline must supply :class:`OracleContext` objects.
    needs_oracle = False

    def __init__(self, config: FrameConfig):
        self.config = config

    def reset(self) -> None:
        pass

    def check_stream(self, n_blocks: int) -> None:
        """Validate that the provider can cover ``n_blocks`` blocks."""

    def exhausted(self, tau: int) -> bool:
        return False

    def aec_masks(self, tau: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def bf_mask(self, tau: int, ctx: OracleContext | None) -> np.ndarray:
        raise NotImplementedError

    def pf_mask(self, tau: int, ctx: BeamformedContext | None) -> np.ndarray:
        raise NotImplementedError


class ConstantMaskProvider(MaskProvider):
    def __init__(self, config: FrameConfig, m_mu=0.5, m_aec=1.0, m_bf=0.5, m_pf=1.0):
        super().__init__(config)
        F, P = config.F, config.P
        self.masks = MaskSet(
            np.broadcast_to(np.asarray(m_mu, dtype=float), (F,)),
            np.broadcast_to(np.asarray(m_aec, dtype=float), (F,)),
            np.broadcast_to(np.asarray(m_bf, dtype=float), (P, F)),
            np.broadcast_to(np.asarray(m_pf, dtype=float), (F,)),
        )

    def aec_masks(self, tau):
        return self.masks.m_mu, self.masks.m_aec

    def bf_mask(self, tau, ctx):
        return self.masks.m_bf

    def pf_mask(self, tau, ctx):
        return self.masks.m_pf


class OracleMaskProvider(MaskProvider):
    """Oracle control: frozen AEC (m_mu = 0), ratio masks from the true components.

    With ``direct_cpsd=True`` the beamformer consumes the true interference and
    speech spectra instead of masked error signals; the emitted bf mask is then
    informational only.
    """

    needs_oracle = True

    def __init__(self, config: FrameConfig, direct_cpsd: bool = False):
        super().__init__(config)
        self.direct_cpsd = direct_cpsd

    def aec_masks(self, tau):
        F = self.config.F
        return np.zeros(F), np.zeros(F)

    def bf_mask(self, tau, ctx):
        if ctx is None:
            raise ConfigurationError("oracle masks need the component images")
        return oracle_bf_mask(ctx)

    def pf_mask(self, tau, ctx):
        if ctx is None:
            raise ConfigurationError("oracle masks need the component images")
        return oracle_pf_mask(ctx)


class FileMaskProvider(MaskProvider):
    """Replays a mask file block by block."""

    def __init__(self, config: FrameConfig, path: str | Path, n_blocks: int | None = None):
        super().__init__(config)
        self.path = Path(path)
        self.clamped = [0]
        self.blocks = read_mask_file(self.path, config, self.clamped)
        if n_blocks is not None:
            self.check_stream(n_blocks)

    @property
    def clamp_count(self) -> int:
        return self.clamped[0]

    def check_stream(self, n_blocks):
        if len(self.blocks) < n_blocks:
            raise MaskLengthError(f"{self.path}: {len(self.blocks)} mask blocks for a "
                                  f"{n_blocks}-block stream")

    def exhausted(self, tau):
        return tau >= len(self.blocks)

    def aec_masks(self, tau):
        b = self.blocks[tau]
        return b.m_mu, b.m_aec

    def bf_mask(self, tau, ctx):
        return self.blocks[tau].m_bf

    def pf_mask(self, tau, ctx):
        return self.blocks[tau].m_pf


def write_mask_file(path: str | Path, masks: Sequence[MaskSet], config: FrameConfig) -> None:
    P, F = config.P, config.F
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, P, F, len(masks)))
        for m in masks:
            m.check_shape(config)
            for arr in (m.m_mu, m.m_aec, m.m_bf.reshape(-1), m.m_pf):
                fh.write(np.asarray(arr, dtype="<f4").tobytes())


def read_mask_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise MaskHeaderError(f"{path}: truncated header")
    magic, version, P, F, count = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise MaskHeaderError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise MaskHeaderError(f"{path}: unsupported version {version}")
    return {"P": P, "F": F, "block_count": count}


def read_mask_file(path: str | Path, config: FrameConfig, clamp_counter: list | None = None) -> list[MaskSet]:
    hdr = read_mask_header(path)
    P, F, count = hdr["P"], hdr["F"], hdr["block_count"]
    if P != config.P or F != config.F:
        raise MaskShapeError(f"{path}: file has P={P}, F={F}; config expects P={config.P}, F={config.F}")
    per_block = 3 * F + P * F
    data = np.fromfile(path, dtype="<f4", offset=_HEADER.size)
    if data.size != per_block * count:
        raise MaskHeaderError(f"{path}: payload holds {data.size} values, header implies {per_block * count}")
    data = data.reshape(count, per_block).astype(np.float64)
    counter = clamp_counter if clamp_counter is not None else [0]
    out = []
    for row in data:
        m_mu = quantize(row[:F], counter)
        m_aec = quantize(row[F:2 * F], counter)
        m_bf = quantize(row[2 * F:2 * F + P * F].reshape(P, F), counter)
        m_pf = quantize(row[2 * F + P * F:], counter)
        out.append(MaskSet(m_mu, m_aec, m_bf, m_pf))
    return out


def parse_provider(spec: str, config: FrameConfig, n_blocks: int | None = None) -> MaskProvider:
    """Build a provider from ``oracle``, ``oracle-direct``, ``constant:mu,aec,bf,pf`` or ``file:<path>``."""
    kind, _, arg = spec.partition(":")
    if kind == "oracle":
        return OracleMaskProvider(config, direct_cpsd=(arg == "direct"))
    if kind == "oracle-direct":
        return OracleMaskProvider(config, direct_cpsd=True)
    if kind == "constant":
        vals: Iterable[float] = [float(v) for v in arg.split(",")] if arg else []
        vals = list(vals)
        if len(vals) not in (0, 4):
            raise ConfigurationError("constant provider takes four values: m_mu,m_aec,m_bf,m_pf")
        return ConstantMaskProvider(config, *vals)
    if kind == "file":
        if not arg:
            raise ConfigurationError("file provider needs a path")
        return FileMaskProvider(config, arg, n_blocks)
    raise ConfigurationError(f"unknown provider {spec!r}")


def oracle_aec_state(config: FrameConfig, echo_rirs: np.ndarray, lambda_x: float = 0.5):
    """AEC state frozen at the first R taps of the true loudspeaker-microphone RIRs."""
    from .aec import state_from_taps

    return state_from_taps(config, echo_rirs, frozen=True, lambda_x=lambda_x)
