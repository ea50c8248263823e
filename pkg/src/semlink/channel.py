"""Physical-layer simulation.

Power-normalized complex symbol streams, AWGN and Rayleigh block-fading
transmission with perfect-CSI equalization at the receiver, inverse
reassembly with zero padding, and bandwidth-compression accounting.

The differentiable path (`apply_channel`) wraps the exact protocol path in a
straight-through node: forward values are bit-identical to
flatten_r2c -> transmit -> c2r_unflatten, while the backward pass treats the
channel as additive constant noise, i.e. an identity Jacobian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .allocator import MaskAndSideInfo
from .errors import ConfigError, ContractError, ProtocolError
from .tensor import Tensor

SIDE_INFO_BITS_PER_TOKEN = 16   # b travels as one u16 per token
DEFAULT_FRAME_GEOM = (167, 167)

CHANNEL_KINDS = ("awgn", "rayleigh_block")


@dataclass
class ChannelConfig:
    kind: str
    snr_db: float
    sigma_h: float = 1.0
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in CHANNEL_KINDS:
            raise ConfigError(f"channel kind must be one of {CHANNEL_KINDS}, got {self.kind!r}")
        if self.kind == "rayleigh_block" and not self.sigma_h > 0:
            raise ConfigError(f"sigma_h must be > 0 for rayleigh_block, got {self.sigma_h}")


@dataclass
class SymbolStream:
    """Complex channel symbols. norm_factor travels as metadata, never over
    the channel; undoing it at the receiver is an idealization."""

    symbols: np.ndarray
    power: float
    norm_factor: float


@dataclass
class BcrReport:
    n: float
    source_size: int
    bcr: float
    side_info_bits: int


def noise_sigma2(snr_db: float) -> float:
    """Noise power for unit signal power: 10^(-snr_db/10). +inf disables noise."""
    return 10.0 ** (-float(snr_db) / 10.0)


def flatten_r2c(s_v: np.ndarray | Tensor, side: MaskAndSideInfo) -> SymbolStream:
    """Gather the k_i retained reals per token, pair consecutive reals into
    complex symbols, normalize by sqrt(max(1, mean power))."""
    data = s_v.data if isinstance(s_v, Tensor) else np.asarray(s_v, dtype=np.float64)
    if data.shape != side.mask.shape:
        raise ContractError(f"features {data.shape} vs mask {side.mask.shape}")
    keep = side.mask.astype(bool)
    if np.any(data[~keep] != 0.0):
        raise ContractError("masked channels must be exactly zero before flattening")
    if np.any(side.k % 2 != 0):
        raise ContractError("every retained count must be even to form complex pairs")
    reals = data[keep]
    sym = reals[0::2] + 1j * reals[1::2]
    pre_power = float(np.mean(np.abs(sym) ** 2)) if sym.size else 0.0
    gamma = math.sqrt(max(1.0, pre_power))
    sym = sym / gamma
    return SymbolStream(symbols=sym, power=pre_power / gamma**2, norm_factor=gamma)


def draw_channel_state(cfg: ChannelConfig, rng: np.random.Generator, size=None):
    """One complex gain per stream: |h| ~ Rayleigh(sigma_h), phase uniform.
    AWGN channels have a fixed unit gain."""
    if cfg.kind == "awgn":
        return (1 + 0j) if size is None else np.ones(size, dtype=np.complex128)
    mag = rng.rayleigh(cfg.sigma_h, size)
    phase = rng.uniform(0.0, 2.0 * math.pi, size)
    return mag * np.exp(1j * phase)


def transmit(
    s: SymbolStream,
    cfg: ChannelConfig,
    rng: np.random.Generator,
    trace_out: list | None = None,
) -> tuple[SymbolStream, complex]:
    """y = h*s + n with i.i.d. complex Gaussian n (per-component variance
    sigma^2/2), then perfect-CSI equalization y/h. Returns the equalized
    stream and h. sigma^2 == 0 under AWGN short-circuits to the input."""
    sigma2 = noise_sigma2(cfg.snr_db)
    h = draw_channel_state(cfg, rng)
    sym = s.symbols
    if sigma2 == 0.0 and cfg.kind == "awgn":
        out = sym.copy()
        noise = np.zeros_like(sym)
    else:
        comps = rng.standard_normal((sym.size, 2)) * math.sqrt(sigma2 / 2.0)
        noise = comps[:, 0] + 1j * comps[:, 1]
        received = h * sym + noise
        out = received if cfg.kind == "awgn" else received / h
    if trace_out is not None:
        eq_noise = out - sym
        for t in range(sym.size):
            trace_out.append((sym[t].real, sym[t].imag, eq_noise[t].real, eq_noise[t].imag))
    power = float(np.mean(np.abs(out) ** 2)) if out.size else 0.0
    return SymbolStream(symbols=out, power=power, norm_factor=s.norm_factor), h


def c2r_unflatten(s_hat: SymbolStream, side: MaskAndSideInfo, norm_factor: float) -> np.ndarray:
    """Undo normalization, unpack complex pairs, scatter into the first k_i
    channels per token; untransmitted channels come back as exact zeros."""
    expected = int(side.k.sum()) // 2
    if s_hat.symbols.size != expected:
        raise ProtocolError(
            f"stream carries {s_hat.symbols.size} symbols but side info implies {expected}")
    sym = s_hat.symbols * norm_factor
    reals = np.empty(2 * sym.size, dtype=np.float64)
    reals[0::2] = sym.real
    reals[1::2] = sym.imag
    out = np.zeros(side.mask.shape, dtype=np.float64)
    out[side.mask.astype(bool)] = reals
    return out


def _per_sample(side: MaskAndSideInfo, b: int) -> MaskAndSideInfo:
    return MaskAndSideInfo(mask=side.mask[b], b=side.b[b], k=side.k[b])


def apply_channel(
    s_v: Tensor,
    side: MaskAndSideInfo,
    cfg: ChannelConfig,
    rng: np.random.Generator,
) -> Tensor:
    """Differentiable channel application for (l_v, d) or batched (B, l_v, d)
    features. Forward: the exact protocol path per sample. Backward: identity
    (noise and normalization scale held constant)."""
    if s_v.data.ndim == 2:
        stream = flatten_r2c(s_v.data, side)
        noisy, _ = transmit(stream, cfg, rng)
        hard = c2r_unflatten(noisy, side, stream.norm_factor)
    elif s_v.data.ndim == 3:
        hard = np.empty_like(s_v.data)
        for b in range(s_v.data.shape[0]):
            sub = _per_sample(side, b)
            stream = flatten_r2c(s_v.data[b], sub)
            noisy, _ = transmit(stream, cfg, rng)
            hard[b] = c2r_unflatten(noisy, sub, stream.norm_factor)
    else:
        raise ContractError(f"expected 2-D or 3-D features, got shape {s_v.shape}")
    return T.straight_through(hard, s_v)


def compute_bcr(side: MaskAndSideInfo, frame_geom: tuple[int, int] = DEFAULT_FRAME_GEOM) -> BcrReport:
    """n = sum_i k_i / 2 (mean over leading axes if batched);
    bcr = n / (l_v * 3 * x * y)."""
    x, y = frame_geom
    if x <= 0 or y <= 0:
        raise ContractError(f"frame geometry must be positive, got {frame_geom}")
    l_v = side.k.shape[-1]
    n = float(np.mean(side.k.sum(axis=-1))) / 2.0
    source_size = l_v * 3 * x * y
    return BcrReport(
        n=n,
        source_size=source_size,
        bcr=n / source_size,
        side_info_bits=l_v * SIDE_INFO_BITS_PER_TOKEN,
    )
