"""Joint source-channel codec.

L stacked dual-branch cross-attention blocks on each side of the channel,
sharing one learnable rate embedding (a single parameter read by both the
transmit and receive paths). On the encode path a rate predictor after every
block scores the bandwidth candidates; the final predictor additionally sees
the aggregated earlier decisions. Selection is Gumbel straight-through during
training, plain argmax at evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import allocator as A
from . import tensor as T
from .allocator import CandidateRates, GumbelSample, MaskAndSideInfo, RatePredictor
from .errors import ContractError, DimensionError
from .nn import DualBranchBlock, init_weight, zeros_param
from .tensor import Tensor

SELECTION_MODES = ("sample_st", "sample_soft", "argmax")


@dataclass
class EncodeDiagnostics:
    """Every intermediate a test or allocation report may want; never
    serialized into checkpoints."""

    d_scores: list[Tensor] | None   # per-layer candidate scores, None when forced
    sample: GumbelSample | None     # final Gumbel draw, None for argmax/forced
    selection: np.ndarray           # hard one-hot actually applied (..., l_v, q)
    side: MaskAndSideInfo
    mean_k: float


class JSCEncoder:
    """Blocks 1..L with predictor l reading the rate-branch output of block l.
    Predictors 1..L-1 score locally; predictor L folds in their aggregate.
    With L == 1 there are no earlier decisions, so the lone predictor is a
    plain per-layer one."""

    def __init__(self, l_v: int, d: int, n_layers: int, heads: int,
                 rng: np.random.Generator, rate_embedding: Tensor,
                 snr_adaptive: bool = False) -> None:
        if n_layers < 1:
            raise ContractError(f"need at least one layer, got {n_layers}")
        self.l_v = l_v
        self.d = d
        self.rates = CandidateRates(d)
        self.snr_adaptive = snr_adaptive
        self.rate_embedding = rate_embedding
        self.blocks = [DualBranchBlock(d, heads, rng) for _ in range(n_layers)]
        self.predictors = [
            RatePredictor(d, self.rates.q, rng, snr_conditioned=snr_adaptive,
                          final=(i == n_layers - 1 and n_layers > 1))
            for i in range(n_layers)
        ]


class JSCDecoder:
    """Structural mirror of the encoder: same block stack, no predictors, the
    same rate-embedding parameter (its rate branch restarts from the shared
    embedding, since only the side info crosses the channel), plus the
    learnable compensation vector for untransmitted channels."""

    def __init__(self, l_v: int, d: int, n_layers: int, heads: int,
                 rng: np.random.Generator, rate_embedding: Tensor) -> None:
        self.l_v = l_v
        self.d = d
        self.rate_embedding = rate_embedding
        self.blocks = [DualBranchBlock(d, heads, rng) for _ in range(n_layers)]
        self.compensation = zeros_param((d,))


class JSCCodec:
    def __init__(self, l_v: int, d: int, n_layers: int, heads: int,
                 rng: np.random.Generator, snr_adaptive: bool = False) -> None:
        # learned token matrix, one row per video token; rows are consumed as
        # features (not contracted over), so unit variance applies
        self.rate_embedding = init_weight(rng, (l_v, d), std=1.0)
        self.enc = JSCEncoder(l_v, d, n_layers, heads, rng, self.rate_embedding,
                              snr_adaptive)
        self.dec = JSCDecoder(l_v, d, n_layers, heads, rng, self.rate_embedding)

    def named_params(self) -> dict[str, Tensor]:
        out = {"jsc.rate_embedding": self.rate_embedding}
        for i, b in enumerate(self.enc.blocks, start=1):
            out.update(b.named_params(f"jsc.enc.block{i}"))
        for i, p in enumerate(self.enc.predictors, start=1):
            out.update(p.named_params(f"jsc.enc.pred{i}"))
        for i, b in enumerate(self.dec.blocks, start=1):
            out.update(b.named_params(f"jsc.dec.block{i}"))
        out["jsc.dec.compensation"] = self.dec.compensation
        return out


def _lead_match(emb: Tensor, like: Tensor) -> Tensor:
    """Rate embedding (l_v, d) -> same leading shape as the feature tensor."""
    if like.data.ndim == 2:
        return emb
    if like.data.ndim == 3:
        wide = T.reshape(emb, (1,) + emb.shape)
        return T.expand(wide, 0, like.shape[0])
    raise ContractError(f"expected 2-D or 3-D features, got shape {like.shape}")


def _run_blocks(blocks, rate_embedding: Tensor, feats: Tensor):
    y_rate = _lead_match(rate_embedding, feats)
    rate_trace = []
    for block in blocks:
        y_rate, feats = block(y_rate, feats)
        rate_trace.append(y_rate)
    return rate_trace, feats


def encode(enc: JSCEncoder, y_v: Tensor, *, tau: float = 1.0,
           rng: np.random.Generator | None = None, snr_db: float | None = None,
           mode: str = "sample_st", force_k: int | None = None,
           ) -> tuple[Tensor, MaskAndSideInfo, EncodeDiagnostics]:
    if y_v.shape[-2:] != (enc.l_v, enc.d):
        raise DimensionError(
            f"expected trailing shape ({enc.l_v}, {enc.d}), got {y_v.shape}")
    if mode not in SELECTION_MODES:
        raise ContractError(f"mode must be one of {SELECTION_MODES}, got {mode!r}")

    if force_k is not None:
        # fixed allocation: predictors bypassed entirely (used by the staged
        # trainer before the allocator is unfrozen)
        if force_k not in enc.rates.rates:
            raise ContractError(f"force_k={force_k} not in candidates {enc.rates.rates}")
        _, feats = _run_blocks(enc.blocks, enc.rate_embedding, y_v)
        idx = enc.rates.rates.index(force_k)
        sel = np.zeros(y_v.shape[:-1] + (enc.rates.q,))
        sel[..., idx] = 1.0
        side = A.build_mask(sel, enc.rates)
        s_v = T.mul(feats, T.constant(side.mask))
        diag = EncodeDiagnostics(None, None, sel, side, float(side.k.mean()))
        return s_v, side, diag

    snr_arg = snr_db if enc.snr_adaptive else None
    if enc.snr_adaptive and snr_db is None:
        raise ContractError("snr-adaptive encoder needs snr_db")

    rate_trace, feats = _run_blocks(enc.blocks, enc.rate_embedding, y_v)
    d_scores: list[Tensor] = []
    for i, pred in enumerate(enc.predictors):
        if pred.final:
            d_scores.append(pred(rate_trace[i], snr_db=snr_arg, prior=list(d_scores)))
        else:
            d_scores.append(pred(rate_trace[i], snr_db=snr_arg))
    d_final = d_scores[-1]

    if mode == "argmax":
        idx = np.argmax(d_final.data, axis=-1)
        sel = np.zeros_like(d_final.data)
        np.put_along_axis(sel, idx[..., None], 1.0, axis=-1)
        side = A.build_mask(sel, enc.rates)
        mask_t: Tensor = T.constant(side.mask)
        gs: GumbelSample | None = None
    else:
        if rng is None:
            raise ContractError(f"mode {mode!r} draws Gumbel noise and needs an rng")
        gs = A.gumbel_sample(d_final, tau, rng)
        sel = gs.hard
        side = A.build_mask(sel, enc.rates)
        if mode == "sample_st":
            mask_t = A.differentiable_mask(A.straight_through_select(gs), enc.rates)
        else:  # sample_soft: continuous mask, forward not binary
            mask_t = T.matmul(gs.soft, T.constant(enc.rates.prefix_matrix()))

    s_v = T.mul(feats, mask_t)
    diag = EncodeDiagnostics(d_scores, gs, sel, side, float(side.k.mean()))
    return s_v, side, diag


def decode(dec: JSCDecoder, s_hat: Tensor, side: MaskAndSideInfo) -> Tensor:
    """Compensate untransmitted channels, then run the block stack; the
    feature-branch output is the recovered semantics."""
    if s_hat.shape[-2:] != (dec.l_v, dec.d):
        raise DimensionError(
            f"expected trailing shape ({dec.l_v}, {dec.d}), got {s_hat.shape}")
    comp = A.compensate(s_hat, side, dec.compensation)
    _, feats = _run_blocks(dec.blocks, dec.rate_embedding, comp)
    return feats
