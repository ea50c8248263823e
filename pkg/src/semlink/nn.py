"""Reusable neural components: linear layers, layer norm, feed-forward nets,
multi-head self-attention, and the dual-branch cross-attention block.

All modules accept inputs with arbitrary leading batch axes: (..., n, d).
Initialization: weights ~ N(0, 1/fan_in) so activations keep unit scale
through matmuls, biases zero, layer-norm gain 1 (recorded in checkpoint
metadata). At the small widths used here (d = 8..64) a tiny fixed std leaves
the similarity readout orders of magnitude below the softmax's useful range
and training stalls at chance.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor

LN_EPS = 1e-5
FFN_MULT = 2  # hidden width of feed-forward nets, as a multiple of d


def init_weight(rng: np.random.Generator, shape: tuple[int, ...],
                std: float | None = None) -> Tensor:
    """std defaults to 1/sqrt(fan_in) for (in, out) weight matrices; lookup
    tables and other row-indexed parameters pass an explicit std."""
    if std is None:
        std = 1.0 / math.sqrt(shape[0])
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class LayerNorm:
    def __init__(self, d: int) -> None:
        self.gain = ones_param((d,))
        self.bias = zeros_param((d,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, eps=LN_EPS)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


class Linear:
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 activation: str = "none") -> None:
        if activation not in ("none", "gelu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = init_weight(rng, (d_in, d_out))
        self.bias = zeros_param((d_out,))
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        out = T.add(T.matmul(x, self.weight), self.bias)
        return T.gelu(out) if self.activation == "gelu" else out

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class FeedForward:
    """Two linear layers with gelu between them: d -> FFN_MULT*d -> d."""

    def __init__(self, d: int, rng: np.random.Generator) -> None:
        self.lin1 = Linear(d, FFN_MULT * d, rng, activation="gelu")
        self.lin2 = Linear(FFN_MULT * d, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self.lin1(x))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.lin1.named_params(f"{prefix}.lin1"),
                **self.lin2.named_params(f"{prefix}.lin2")}


class MultiHeadProjection:
    """Fused QKV projection (d -> 3d) plus output projection, split over heads."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator) -> None:
        if d % heads != 0:
            raise DimensionError(f"model dim {d} not divisible by heads {heads}")
        self.d = d
        self.heads = heads
        self.head_dim = d // heads
        self.w_qkv = init_weight(rng, (d, 3 * d))
        self.w_out = init_weight(rng, (d, d))

    def qkv(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        fused = T.matmul(x, self.w_qkv)
        q = T.slice_axis(fused, -1, 0, self.d)
        k = T.slice_axis(fused, -1, self.d, 2 * self.d)
        v = T.slice_axis(fused, -1, 2 * self.d, 3 * self.d)
        return q, k, v

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_qkv": self.w_qkv, f"{prefix}.w_out": self.w_out}


def split_heads(x: Tensor, heads: int) -> Tensor:
    # (..., n, d) -> (..., heads, n, d/heads)
    *lead, n, d = x.shape
    hd = d // heads
    x = T.reshape(x, (*lead, n, heads, hd))
    nd = x.ndim
    axes = list(range(nd))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return T.permute(x, axes)


def merge_heads(x: Tensor) -> Tensor:
    # (..., heads, n, hd) -> (..., n, heads*hd)
    nd = x.ndim
    axes = list(range(nd))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    x = T.permute(x, axes)
    *lead, n, heads, hd = x.shape
    return T.reshape(x, (*lead, n, heads * hd))


def scaled_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                     bias: Tensor | None = None,
                     return_weights: bool = False):
    """softmax(q kT / sqrt(head_dim)) v, per head.

    bias, if given, is added to the raw scores pre-softmax (used for padding
    masks as large negative constants)."""
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    hd = qh.shape[-1]
    scores = T.scale(T.matmul(qh, T.swap_last2(kh)), 1.0 / math.sqrt(hd))
    if bias is not None:
        scores = T.add(scores, bias)
    weights = T.softmax_lastaxis(scores)
    out = merge_heads(T.matmul(weights, vh))
    return (out, weights) if return_weights else (out, None)


def cross_attention(q_side: Tensor, kv_side: Tensor,
                    proj_q: MultiHeadProjection, proj_kv: MultiHeadProjection,
                    return_weights: bool = False):
    """Queries from q_side through proj_q; keys/values from kv_side through
    proj_kv; output projection from proj_q."""
    if q_side.shape[-1] != kv_side.shape[-1]:
        raise DimensionError(
            f"cross_attention: feature dims differ, {q_side.shape} vs {kv_side.shape}")
    q, _, _ = proj_q.qkv(q_side)
    _, k, v = proj_kv.qkv(kv_side)
    attn, w = scaled_attention(q, k, v, proj_q.heads, return_weights=return_weights)
    out = T.matmul(attn, proj_q.w_out)
    return (out, w) if return_weights else out


class TransformerBlock:
    """Standard pre-norm self-attention block:
    h = x + MHSA(LN1(x)); out = h + FFN(LN2(h))."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator) -> None:
        self.proj = MultiHeadProjection(d, heads, rng)
        self.ln1 = LayerNorm(d)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(d, rng)

    def __call__(self, x: Tensor, attn_bias: Tensor | None = None,
                 return_weights: bool = False):
        if x.shape[-1] != self.proj.d:
            raise DimensionError(f"block dim {self.proj.d} vs input {x.shape}")
        q, k, v = self.proj.qkv(self.ln1(x))
        attn, w = scaled_attention(q, k, v, self.proj.heads, bias=attn_bias,
                                   return_weights=return_weights)
        h = T.add(x, T.matmul(attn, self.proj.w_out))
        out = T.add(h, self.ffn(self.ln2(h)))
        return (out, w) if return_weights else out

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.proj.named_params(f"{prefix}.proj"),
                **self.ln1.named_params(f"{prefix}.ln1"),
                **self.ln2.named_params(f"{prefix}.ln2"),
                **self.ffn.named_params(f"{prefix}.ffn")}


class _Branch:
    def __init__(self, d: int, heads: int, rng: np.random.Generator) -> None:
        self.proj = MultiHeadProjection(d, heads, rng)
        self.ln1 = LayerNorm(d)
        self.ln2 = LayerNorm(d)
        self.ffn = FeedForward(d, rng)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.proj.named_params(f"{prefix}.proj"),
                **self.ln1.named_params(f"{prefix}.ln1"),
                **self.ln2.named_params(f"{prefix}.ln2"),
                **self.ffn.named_params(f"{prefix}.ffn")}


class DualBranchBlock:
    """Two symmetric cross-attention branches over a (rate, feature) pair.

    Update rule per branch (the feature branch mirrors it with roles swapped):

        t    = MHCA(LN1_r(rate), LN1_f(feat)) + rate
        rate' = FFN(LN2_r(t)) + LN2_r(t)

    Both branch updates read the block's input pair; there is no sequential
    update inside a block. Note the second line adds the FFN output to the
    *normalized* tensor, not to t itself — intentionally nonstandard, kept
    exactly as specified (a conventional pre-norm block would use `+ t`).
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator) -> None:
        self.rate = _Branch(d, heads, rng)
        self.feat = _Branch(d, heads, rng)
        self.d = d

    def __call__(self, y_rate: Tensor, y_v: Tensor) -> tuple[Tensor, Tensor]:
        if y_rate.shape != y_v.shape or y_rate.shape[-1] != self.d:
            raise DimensionError(
                f"dual branch: shapes {y_rate.shape} / {y_v.shape}, d={self.d}")
        nr = self.rate.ln1(y_rate)
        nv = self.feat.ln1(y_v)

        t_r = T.add(cross_attention(nr, nv, self.rate.proj, self.feat.proj), y_rate)
        t_v = T.add(cross_attention(nv, nr, self.feat.proj, self.rate.proj), y_v)

        lr = self.rate.ln2(t_r)
        lv = self.feat.ln2(t_v)
        out_r = T.add(self.rate.ffn(lr), lr)
        out_v = T.add(self.feat.ffn(lv), lv)
        return out_r, out_v

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.rate.named_params(f"{prefix}.rate"),
                **self.feat.named_params(f"{prefix}.feat")}


def set_all_zero(params: dict[str, Tensor]) -> None:
    """Test helper: zero every parameter in place (including layer-norm gains)."""
    for p in params.values():
        p.data[...] = 0.0
