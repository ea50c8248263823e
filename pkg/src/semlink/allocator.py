"""Learned adaptive bandwidth allocation.

Per-layer rate predictors read the rate-embedding branch and emit row-stochastic
decision scores over q = log2(d) candidate rates {2, 4, ..., d}. The final
predictor additionally consumes the running mean of earlier decisions,
beta = (1/L) * sum_{l=1}^{L-1} D_l — the divisor is L even though L-1 terms are
summed; kept verbatim from the source formulation. A Gumbel draw produces a
hard one-hot sample (forward path / mask construction) and a soft tempered
softmax (gradient path); the two are tied by a straight-through op.

The bandwidth cost sum(M) is piecewise constant in the parameters, so training
uses the differentiable surrogate sum(soft * rates); the hard count is what
metrics report. SNR conditioning appends snr_db/20 as one channel per token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .nn import Linear
from .tensor import Tensor

PROB_FLOOR = 1e-12  # clamp before logs
SNR_SCALE = 20.0    # snr_db / SNR_SCALE enters the predictors


@dataclass(frozen=True)
class CandidateRates:
    d: int

    def __post_init__(self) -> None:
        if self.d < 2 or (self.d & (self.d - 1)) != 0:
            raise ContractError(f"channel dim d={self.d} must be a power of two >= 2")

    @property
    def q(self) -> int:
        return self.d.bit_length() - 1

    @property
    def rates(self) -> tuple[int, ...]:
        return tuple(2 ** (i + 1) for i in range(self.q))

    def prefix_matrix(self) -> np.ndarray:
        """(q, d) binary matrix; row j is rates[j] leading ones."""
        mat = np.zeros((self.q, self.d))
        for j, k in enumerate(self.rates):
            mat[j, :k] = 1.0
        return mat


@dataclass
class MaskAndSideInfo:
    """Binary prefix mask (..., l_v, d), retained counts b == k (..., l_v)."""

    mask: np.ndarray
    b: np.ndarray
    k: np.ndarray

    def total_channels(self) -> np.ndarray:
        """sum_i k_i per sample (the hard bandwidth cost, == sum of the mask)."""
        return self.k.sum(axis=-1)

    def side_info_bytes(self) -> bytes:
        """b as little-endian unsigned 16-bit values, the lossless side channel."""
        return np.ascontiguousarray(self.b, dtype="<u2").tobytes()


def side_info_from_bytes(raw: bytes, shape: tuple[int, ...], d: int) -> MaskAndSideInfo:
    b = np.frombuffer(raw, dtype="<u2").reshape(shape).astype(np.int64)
    return mask_from_b(b, d)


def mask_from_b(b: np.ndarray, d: int) -> MaskAndSideInfo:
    b = np.asarray(b, dtype=np.int64)
    mask = (np.arange(d) < b[..., None]).astype(np.float64)
    return MaskAndSideInfo(mask=mask, b=b.astype(np.uint16), k=b)


@dataclass
class GumbelSample:
    hard: np.ndarray   # exact one-hot, constant
    soft: Tensor       # tempered softmax of the same perturbed logits
    tau: float


class RatePredictor:
    """local projection + global mean pooling -> token features (2d), then a
    two-layer MLP with gelu and a softmax head over q candidates."""

    def __init__(self, d: int, q: int, rng: np.random.Generator,
                 snr_conditioned: bool = False, final: bool = False) -> None:
        self.d = d
        self.q = q
        self.snr_conditioned = snr_conditioned
        self.final = final
        extras = (q if final else 0) + (1 if snr_conditioned else 0)
        self.local = Linear(d, d, rng, activation="gelu")
        self.mlp1 = Linear(2 * d + extras, d, rng, activation="gelu")
        self.mlp2 = Linear(d, q, rng)

    def features(self, y_rate: Tensor) -> Tensor:
        """(..., l_v, d) -> (..., l_v, 2d): local projection concatenated with
        the token-mean global vector repeated per token."""
        z_local = self.local(y_rate)
        z_global = T.mean_axes(z_local, (-2,), keepdims=True)
        z_global = T.expand(z_global, -2, y_rate.shape[-2])
        return T.concat([z_local, z_global], axis=-1)

    def __call__(self, y_rate: Tensor, snr_db: float | None = None,
                 prior: list[Tensor] | None = None) -> Tensor:
        if self.snr_conditioned != (snr_db is not None):
            raise ContractError(
                f"predictor built with snr_conditioned={self.snr_conditioned} "
                f"but snr_db={'given' if snr_db is not None else 'missing'}")
        if self.final != (prior is not None):
            raise ContractError("prior decisions must be given iff this is the final predictor")
        parts = [self.features(y_rate)]
        if prior is not None:
            parts.append(aggregate_beta(prior))
        if snr_db is not None:
            col_shape = y_rate.shape[:-1] + (1,)
            parts.append(T.constant(np.full(col_shape, float(snr_db) / SNR_SCALE)))
        z = T.concat(parts, axis=-1) if len(parts) > 1 else parts[0]
        return T.softmax_lastaxis(self.mlp2(self.mlp1(z)))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.local.named_params(f"{prefix}.local"),
                **self.mlp1.named_params(f"{prefix}.mlp1"),
                **self.mlp2.named_params(f"{prefix}.mlp2")}


def aggregate_beta(prior: list[Tensor]) -> Tensor:
    """beta = (1/L) * sum of the L-1 earlier decision scores. The divisor is L
    (not L-1) on purpose: it mirrors the source formula verbatim."""
    if not prior:
        raise ContractError("aggregate_beta needs at least one prior decision")
    big_l = len(prior) + 1
    beta = prior[0]
    for p in prior[1:]:
        beta = T.add(beta, p)
    return T.scale(beta, 1.0 / big_l)


def gumbel_sample(d_scores: Tensor, tau: float, rng: np.random.Generator) -> GumbelSample:
    """One shared Gumbel draw yields the hard argmax one-hot and the tempered
    soft relaxation; argmax(soft) == argmax(hard) by construction."""
    if tau <= 0:
        raise ContractError(f"tau must be > 0, got {tau}")
    log_d = T.log(T.clip_min(d_scores, PROB_FLOOR))
    u = np.clip(rng.random(size=d_scores.shape), 1e-12, 1.0 - 1e-12)
    g = -np.log(-np.log(u))
    z = T.add(log_d, T.constant(g))
    idx = np.argmax(z.data, axis=-1)
    hard = np.zeros_like(z.data)
    np.put_along_axis(hard, idx[..., None], 1.0, axis=-1)
    soft = T.softmax_lastaxis(T.scale(z, 1.0 / tau))
    return GumbelSample(hard=hard, soft=soft, tau=float(tau))


def straight_through_select(sample: GumbelSample) -> Tensor:
    """Forward: the hard one-hot, bit-exact. Backward: the soft path's gradient."""
    return T.straight_through(sample.hard, sample.soft)


def build_mask(selection: np.ndarray, rates: CandidateRates) -> MaskAndSideInfo:
    """Hard one-hot selections (..., l_v, q) -> prefix mask and side info."""
    sel = np.asarray(selection)
    if sel.shape[-1] != rates.q:
        raise DimensionError(f"selection last axis {sel.shape[-1]} != q={rates.q}")
    ones = np.isclose(sel, 1.0)
    if not (np.all(ones.sum(axis=-1) == 1) and np.all((sel == 0) | ones)):
        raise ContractError("selection rows must be exactly one-hot")
    idx = np.argmax(sel, axis=-1)
    k = np.asarray(rates.rates)[idx]
    return mask_from_b(k, rates.d)


def differentiable_mask(st_selection: Tensor, rates: CandidateRates) -> Tensor:
    """Straight-through selection (..., l_v, q) -> mask (..., l_v, d) whose
    forward value is the exact binary prefix mask (one-hot times a binary
    matrix involves no rounding) and whose gradient reaches the soft path."""
    return T.matmul(st_selection, T.constant(rates.prefix_matrix()))


def rate_loss_hard(side: MaskAndSideInfo) -> float:
    """sum over tokens and samples of k_i == sum of all mask entries."""
    return float(side.mask.sum())


def rate_surrogate(soft: Tensor, rates: CandidateRates) -> Tensor:
    """Differentiable bandwidth cost: per sample, sum_i (soft_i . rates)."""
    weighted = T.mul(soft, T.constant(np.asarray(rates.rates, dtype=np.float64)))
    return T.sum_axes(weighted, (-2, -1))


def compensate(s_hat: Tensor, side: MaskAndSideInfo, c: Tensor) -> Tensor:
    """Fill masked (untransmitted) channels with the learnable vector c:
    s_hat + (J - M) * c. Retained channels pass through untouched."""
    if s_hat.shape != side.mask.shape:
        raise DimensionError(f"s_hat {s_hat.shape} vs mask {side.mask.shape}")
    gap = T.constant(1.0 - side.mask)
    return T.add(s_hat, T.mul(gap, c))
