"""Video semantics extraction: per-clip temporal self-attention over object
tracks, learned-affinity spatial graph convolution per frame, object pooling,
fusion with frame-level features, and projection to l_v x d tokens.

Real backbones are out of scope; a synthetic provider generates object and
frame features whose only class-discriminative signal is a temporal profile
along a fixed drift direction, so the downstream QA task rewards temporal
reasoning. Static content (object prototypes) is shared across classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .errors import DimensionError, InputError
from .rng import derive_rng
from .tensor import Tensor

TEMPORAL_BLOCKS = 2  # depth of the per-track temporal transformer


@dataclass(frozen=True)
class EncoderConfig:
    l_v: int = 16   # video tokens
    l_c: int = 4    # clips
    l_f: int = 4    # frames per clip
    r: int = 10     # objects per frame
    m: int = 64     # backbone feature width
    d: int = 32     # semantic token width

    def __post_init__(self) -> None:
        if self.l_v != self.l_c * self.l_f:
            raise InputError(f"l_v={self.l_v} must equal l_c*l_f={self.l_c * self.l_f}")
        if self.d < 2 or (self.d & (self.d - 1)) != 0:
            raise InputError(f"d={self.d} must be a power of two")
        for name in ("l_c", "l_f", "r", "m"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")


def sample_keyframes(total_frames: int, l_v: int) -> list[int]:
    """Evenly spaced sparse sampling: index_k = floor(k * total_frames / l_v)."""
    if total_frames < l_v or l_v < 1:
        raise InputError(f"total_frames={total_frames} must be >= l_v={l_v} >= 1")
    return [k * total_frames // l_v for k in range(l_v)]


class SyntheticVideoProvider:
    """Deterministic synthetic feature source standing in for detector+backbone.

    A world seed fixes r object prototypes, a frame-feature base vector, and
    one orthonormal drift direction per class. Class c moves the features
    along its direction with the nonnegative temporal envelope
    A*(0.5 + 0.5*sin(2*pi*(t + c/n_classes))) at the sampled keyframe
    positions t in [0,1); i.i.d. Gaussian noise (sigma=0.1 by default) is
    added per frame. Backbone features of genuinely different videos differ
    in average content, not only in temporal order, so the envelope is built
    to keep a nonzero time-mean; a pure phase code along a shared direction
    would vanish under any pooling over frames. Same (class_id, sample seed)
    -> identical features.
    """

    def __init__(self, cfg: EncoderConfig, world_seed: int, n_classes: int = 5,
                 total_frames: int = 64, amplitude: float = 1.0,
                 noise_sigma: float = 0.1) -> None:
        if cfg.m < n_classes:
            raise InputError(f"m={cfg.m} cannot host {n_classes} orthonormal "
                             f"class directions")
        self.cfg = cfg
        self.n_classes = int(n_classes)
        self.total_frames = int(total_frames)
        self.amplitude = float(amplitude)
        self.noise_sigma = float(noise_sigma)
        rng = derive_rng(world_seed, "provider.world")
        self.prototypes = rng.normal(0.0, 0.5, size=(cfg.r, cfg.m))
        self.frame_base = rng.normal(0.0, 0.5, size=cfg.m)
        q, _ = np.linalg.qr(rng.standard_normal((cfg.m, n_classes)))
        self.class_dirs = q.T                       # (n_classes, m), orthonormal
        self.keyframes = sample_keyframes(self.total_frames, cfg.l_v)

    def profile(self, class_id: int) -> np.ndarray:
        """Per-token drift coefficient for one class, length l_v."""
        t = np.asarray(self.keyframes, dtype=np.float64) / self.total_frames
        phase = np.sin(2.0 * math.pi * (t + class_id / self.n_classes))
        return self.amplitude * (0.5 + 0.5 * phase)

    def sample(self, class_id: int, sample_seed: int) -> tuple[np.ndarray, np.ndarray]:
        """Returns object features (l_c, l_f, r, m) and frame features (l_c, l_f, m)."""
        if not 0 <= class_id < self.n_classes:
            raise InputError(f"class_id {class_id} outside [0, {self.n_classes})")
        cfg = self.cfg
        rng = np.random.default_rng(sample_seed)
        a = self.profile(class_id).reshape(cfg.l_c, cfg.l_f)
        drift = a[..., None] * self.class_dirs[class_id]
        o = self.prototypes[None, None, :, :] + drift[:, :, None, :]
        o = o + rng.normal(0.0, self.noise_sigma, size=o.shape)
        f = self.frame_base[None, None, :] + drift
        f = f + rng.normal(0.0, self.noise_sigma, size=f.shape)
        return o, f


class GraphConvLayer:
    """Learned-affinity graph convolution over the r objects of each frame:
    A = row_softmax((O W_a)(O W_b)^T); out = gelu(A O W_g) + O."""

    def __init__(self, m: int, rng: np.random.Generator) -> None:
        self.w_a = nn.init_weight(rng, (m, m))
        self.w_b = nn.init_weight(rng, (m, m))
        self.w_g = nn.init_weight(rng, (m, m))

    def __call__(self, o: Tensor) -> Tensor:
        # o: (..., r, m)
        left = T.matmul(o, self.w_a)
        right = T.matmul(o, self.w_b)
        adj = T.softmax_lastaxis(T.matmul(left, T.swap_last2(right)))
        mixed = T.gelu(T.matmul(T.matmul(adj, o), self.w_g))
        return T.add(mixed, o)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_a": self.w_a, f"{prefix}.w_b": self.w_b,
                f"{prefix}.w_g": self.w_g}


class SemanticEncoder:
    def __init__(self, cfg: EncoderConfig, heads: int, rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.temporal = [nn.TransformerBlock(cfg.m, heads, rng)
                         for _ in range(TEMPORAL_BLOCKS)]
        self.graph = GraphConvLayer(cfg.m, rng)
        self.proj = nn.Linear(2 * cfg.m, cfg.d, rng)
        # learned positional tables, zero-initialized: the classes differ by
        # temporal order, and without a position stamp everything downstream
        # of the provider is permutation-symmetric over frames, which leaves
        # the pooled readout order-blind
        self.pos_frame = nn.zeros_param((cfg.l_f, cfg.m))
        self.pos_token = nn.zeros_param((cfg.l_v, cfg.d))

    def temporal_aggregate(self, o: Tensor) -> Tensor:
        """Self-attention along the l_f frame axis, independently per object track."""
        b, l_c, l_f, r, m = o.shape
        x = T.permute(o, (0, 1, 3, 2, 4))          # (B, l_c, r, l_f, m)
        x = T.reshape(x, (b * l_c * r, l_f, m))
        x = T.add(x, self.pos_frame)
        for block in self.temporal:
            x = block(x)
        x = T.reshape(x, (b, l_c, r, l_f, m))
        return T.permute(x, (0, 1, 3, 2, 4))

    def spatial_graph_conv(self, o: Tensor) -> Tensor:
        b, l_c, l_f, r, m = o.shape
        x = T.reshape(o, (b * l_c * l_f, r, m))
        x = self.graph(x)
        return T.reshape(x, (b, l_c, l_f, r, m))

    def pool_fuse_project(self, o: Tensor, f: Tensor) -> Tensor:
        pooled = T.mean_pool(o, 3)                  # mean over objects -> (B, l_c, l_f, m)
        fused = T.concat([pooled, f], axis=-1)      # (B, l_c, l_f, 2m)
        return self.proj(fused)

    def __call__(self, o: Tensor, f: Tensor) -> Tensor:
        """(B, l_c, l_f, r, m), (B, l_c, l_f, m) -> video semantics (B, l_v, d).

        Clips are processed independently (attention and graph mixing never
        cross clip boundaries) and concatenated along the token axis.
        """
        cfg = self.cfg
        if o.shape[1:] != (cfg.l_c, cfg.l_f, cfg.r, cfg.m):
            raise DimensionError(f"object features {o.shape} do not match config {cfg}")
        if f.shape[1:] != (cfg.l_c, cfg.l_f, cfg.m):
            raise DimensionError(f"frame features {f.shape} do not match config {cfg}")
        x = self.temporal_aggregate(o)
        x = self.spatial_graph_conv(x)
        y = self.pool_fuse_project(x, f)            # (B, l_c, l_f, d)
        y = T.reshape(y, (o.shape[0], cfg.l_v, cfg.d))
        return T.add(y, self.pos_token)

    def named_params(self, prefix: str = "enc") -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for i, block in enumerate(self.temporal):
            params.update(block.named_params(f"{prefix}.temporal.block{i}"))
        params.update(self.graph.named_params(f"{prefix}.graph"))
        params.update(self.proj.named_params(f"{prefix}.proj"))
        params[f"{prefix}.pos_frame"] = self.pos_frame
        params[f"{prefix}.pos_token"] = self.pos_token
        return params
