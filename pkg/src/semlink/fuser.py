"""Multimodal fusion and answer prediction.

A small learned text encoder turns each candidate question-answer token
sequence into per-token features. Fusion attends every video token over every
candidate's text tokens and folds the weighted text back into the video
feature; prediction refines the fused tokens, pools both modalities globally
and scores candidates by similarity.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .allocator import PROB_FLOOR
from .errors import ContractError, DimensionError
from .nn import Linear, TransformerBlock, init_weight, zeros_param
from .tensor import Tensor

REFINE_BLOCKS = 2
TEXT_BLOCKS = 2
MAX_TEXT_LEN = 32
PAD_BIAS = -1e9   # additive pre-softmax penalty excluding padded positions


def _pad_bias(pad_mask: np.ndarray, heads: int) -> np.ndarray:
    """(..., s) keep-mask -> (..., heads, s, s) additive attention bias."""
    *lead, s = pad_mask.shape
    gap = (1.0 - pad_mask) * PAD_BIAS
    bias = np.broadcast_to(gap[..., None, None, :], (*lead, heads, s, s))
    return np.ascontiguousarray(bias)


class TextEncoder:
    """Embedding table over a symbolic vocabulary plus a short transformer
    stack; padding is excluded from attention by additive bias."""

    def __init__(self, vocab_size: int, d: int, heads: int,
                 rng: np.random.Generator) -> None:
        self.vocab_size = vocab_size
        self.d = d
        self.heads = heads
        # rows are looked up, not contracted over, so unit variance applies
        self.table = init_weight(rng, (vocab_size, d), std=1.0)
        # zero-initialized positional rows: candidates differ in single token
        # positions, and the blocks alone cannot see sequence order
        self.pos = zeros_param((MAX_TEXT_LEN, d))
        self.blocks = [TransformerBlock(d, heads, rng) for _ in range(TEXT_BLOCKS)]

    def __call__(self, token_ids: np.ndarray, pad_mask: np.ndarray) -> Tensor:
        ids = np.asarray(token_ids)
        if ids.shape != pad_mask.shape:
            raise DimensionError(f"ids {ids.shape} vs pad mask {pad_mask.shape}")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise ContractError(
                f"token ids outside [0, {self.vocab_size}): ({ids.min()}, {ids.max()})")
        s = ids.shape[-1]
        if s > MAX_TEXT_LEN:
            raise ContractError(f"sequence length {s} exceeds {MAX_TEXT_LEN}")
        onehot = np.zeros(ids.shape + (self.vocab_size,))
        np.put_along_axis(onehot, ids[..., None], 1.0, axis=-1)
        x = T.matmul(T.constant(onehot), self.table)
        # row-select the first s positional rows through a constant selector
        # so the gradient reaches the table without a dedicated slicing op
        sel = np.eye(s, MAX_TEXT_LEN)
        x = T.add(x, T.matmul(T.constant(sel), self.pos))
        bias = T.constant(_pad_bias(pad_mask, self.heads))
        for block in self.blocks:
            x = block(x, attn_bias=bias)
        return x

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.table": self.table, f"{prefix}.pos": self.pos}
        for i, b in enumerate(self.blocks, start=1):
            out.update(b.named_params(f"{prefix}.block{i}"))
        return out


class Fuser:
    def __init__(self, d: int, heads: int, vocab_size: int,
                 rng: np.random.Generator) -> None:
        self.d = d
        self.heads = heads
        self.text = TextEncoder(vocab_size, d, heads, rng)
        self.video_query_proj = Linear(d, d, rng)
        self.text_key_proj = Linear(d, d, rng)
        self.refine = [TransformerBlock(d, heads, rng) for _ in range(REFINE_BLOCKS)]

    def named_params(self) -> dict[str, Tensor]:
        out = self.text.named_params("fuser.text")
        out.update(self.video_query_proj.named_params("fuser.video_query_proj"))
        out.update(self.text_key_proj.named_params("fuser.text_key_proj"))
        for i, b in enumerate(self.refine, start=1):
            out.update(b.named_params(f"fuser.refine{i}"))
        return out


def _promote(x: Tensor, want_ndim: int) -> tuple[Tensor, bool]:
    if x.data.ndim == want_ndim:
        return x, False
    if x.data.ndim == want_ndim - 1:
        return T.reshape(x, (1,) + x.shape), True
    raise DimensionError(f"expected {want_ndim - 1}-D or {want_ndim}-D, got {x.shape}")


def fuse(y_v_hat: Tensor, y_q: Tensor, pad_mask: np.ndarray, fuser: Fuser) -> Tensor:
    """Per candidate i: attention weights of every video token over the text
    tokens, gamma_i = softmax(E_v E_qi^T) with padded positions excluded; the
    fused feature is y_v + sum_i gamma_i Y_qi."""
    y_v_hat, squeeze = _promote(y_v_hat, 3)        # (B, l_v, d)
    y_q, _ = _promote(y_q, 4)                      # (B, b, s, d)
    pad = np.asarray(pad_mask, dtype=np.float64)
    if pad.ndim == 2:
        pad = pad[None]
    batch, b, s, d = y_q.shape
    l_v = y_v_hat.shape[-2]
    if y_v_hat.shape[-1] != d or pad.shape != (batch, b, s):
        raise DimensionError(
            f"fuse shapes: video {y_v_hat.shape}, text {y_q.shape}, pad {pad.shape}")

    e_v = fuser.video_query_proj(y_v_hat)          # (B, l_v, d)
    e_q = fuser.text_key_proj(y_q)                 # (B, b, s, d)
    e_v = T.expand(T.reshape(e_v, (batch, 1, l_v, d)), 1, b)
    logits = T.matmul(e_v, T.swap_last2(e_q))      # (B, b, l_v, s)
    gap = np.broadcast_to(((1.0 - pad) * PAD_BIAS)[:, :, None, :], logits.shape)
    gamma = T.softmax_lastaxis(T.add(logits, T.constant(np.ascontiguousarray(gap))))
    mixed = T.matmul(gamma, y_q)                   # (B, b, l_v, d)
    fused = T.add(y_v_hat, T.sum_axes(mixed, (-3,)))
    return T.reshape(fused, (l_v, d)) if squeeze else fused


def masked_mean(y_q: Tensor, pad_mask: np.ndarray) -> Tensor:
    """Mean over unpadded text positions: (..., s, d) -> (..., d)."""
    pad = np.asarray(pad_mask, dtype=np.float64)
    counts = pad.sum(axis=-1)
    if np.any(counts == 0):
        raise ContractError("candidate sequence with no unpadded tokens")
    weights = pad[..., None] / counts[..., None, None]
    w = np.broadcast_to(weights, y_q.shape)
    return T.sum_axes(T.mul(y_q, T.constant(np.ascontiguousarray(w))), (-2,))


def predict(y_qv: Tensor, y_q: Tensor, pad_mask: np.ndarray, fuser: Fuser,
            ) -> tuple[Tensor, np.ndarray]:
    """Refine the fused tokens, pool both modalities, score by similarity.
    Returns row-stochastic scores (B, b) and argmax answers (B,); exact ties
    resolve to the lowest index."""
    y_qv, squeeze = _promote(y_qv, 3)
    y_q, _ = _promote(y_q, 4)
    pad = np.asarray(pad_mask, dtype=np.float64)
    if pad.ndim == 2:
        pad = pad[None]
    for block in fuser.refine:
        y_qv = block(y_qv)
    v_global = T.mean_pool(y_qv, -2)               # (B, d)
    q_global = masked_mean(y_q, pad)               # (B, b, d)
    # elementwise multiply + reduce rather than matmul: identical candidate
    # rows then score bitwise-identically, making the tie-break deterministic
    b = q_global.shape[1]
    v_rows = T.expand(T.reshape(v_global, (v_global.shape[0], 1, v_global.shape[-1])), 1, b)
    sims = T.sum_axes(T.mul(v_rows, q_global), (-1,))   # (B, b)
    # dot products of two O(sqrt(d)) vectors; the attention-style temperature
    # keeps the softmax out of its saturated regime at any width
    scores = T.softmax_lastaxis(T.scale(sims, 1.0 / math.sqrt(q_global.shape[-1])))
    answers = np.argmax(scores.data, axis=-1)
    if squeeze:
        return T.reshape(scores, (scores.shape[-1],)), answers[0]
    return scores, answers


def task_loss(scores: Tensor, labels) -> Tensor:
    """Mean cross-entropy -log(score at label); scores floor at 1e-12 so an
    underflowed softmax cannot produce -inf."""
    scores, _ = _promote(scores, 2)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    batch, b = scores.shape
    if labels.shape != (batch,):
        raise DimensionError(f"labels {labels.shape} vs scores {scores.shape}")
    if labels.min() < 0 or labels.max() >= b:
        raise ContractError(f"label outside [0, {b})")
    onehot = np.zeros((batch, b))
    onehot[np.arange(batch), labels] = 1.0
    picked = T.mul(T.log(T.clip_min(scores, PROB_FLOOR)), T.constant(onehot))
    return T.scale(T.sum_axes(picked), -1.0 / batch)
