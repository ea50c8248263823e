import numpy as np
import pytest

from semlink import nn
from semlink import tensor as T
from semlink.encoder import (EncoderConfig, GraphConvLayer, SemanticEncoder,
                             SyntheticVideoProvider, sample_keyframes)
from semlink.errors import InputError
from semlink.tensor import Tensor

from conftest import fd_gradcheck

TINY = EncoderConfig(l_v=4, l_c=2, l_f=2, r=3, m=8, d=4)


def make_encoder(cfg=TINY, heads=1, seed=0):
    return SemanticEncoder(cfg, heads, np.random.default_rng(seed))


def provider_batch(provider, classes, seeds):
    os_, fs = [], []
    for c, s in zip(classes, seeds):
        o, f = provider.sample(c, s)
        os_.append(o)
        fs.append(f)
    return Tensor(np.stack(os_)), Tensor(np.stack(fs))


# -------------------------------------------------------------- keyframes


def test_keyframes_exact_cover():
    assert sample_keyframes(16, 16) == list(range(16))


def test_keyframes_even_spacing():
    assert sample_keyframes(32, 16) == list(range(0, 32, 2))


def test_keyframes_formula():
    assert sample_keyframes(100, 16) == [k * 100 // 16 for k in range(16)]


def test_keyframes_too_few_frames():
    with pytest.raises(InputError):
        sample_keyframes(8, 16)


# ----------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(InputError):
        EncoderConfig(l_v=5, l_c=2, l_f=2)
    with pytest.raises(InputError):
        EncoderConfig(l_v=4, l_c=2, l_f=2, d=24)


# ----------------------------------------------------------------- provider


def test_provider_determinism():
    p = SyntheticVideoProvider(TINY, world_seed=7)
    o1, f1 = p.sample(2, 123)
    o2, f2 = p.sample(2, 123)
    assert np.array_equal(o1, o2) and np.array_equal(f1, f2)
    o3, _ = p.sample(2, 124)
    assert not np.array_equal(o1, o3)


def test_provider_classes_distinguishable():
    p = SyntheticVideoProvider(TINY, world_seed=7)
    # trajectory = envelope along the class direction; orthonormal directions
    # keep every pair of classes far apart in feature space at matching times
    tracks = np.stack([p.profile(c)[:, None] * p.class_dirs[c] for c in range(5)])
    for a in range(5):
        for b in range(a + 1, 5):
            gap = np.linalg.norm(tracks[a] - tracks[b], axis=-1)
            assert np.max(gap) > 0.5


def test_provider_shapes_finite():
    p = SyntheticVideoProvider(TINY, world_seed=1)
    o, f = p.sample(0, 5)
    assert o.shape == (2, 2, 3, 8) and f.shape == (2, 2, 8)
    assert np.all(np.isfinite(o)) and np.all(np.isfinite(f))


# ----------------------------------------------------------------- graph conv


def test_graph_conv_single_object():
    rng = np.random.default_rng(2)
    layer = GraphConvLayer(8, np.random.default_rng(3))
    o = Tensor(rng.standard_normal((1, 1, 8)))
    out = layer(o).data
    # r=1: adjacency is [[1]], so output = gelu(o W_g) + o
    expect = T.add(T.gelu(T.matmul(o, layer.w_g)), o).data
    assert np.allclose(out, expect, atol=1e-14)


def test_graph_conv_identical_objects_identical_rows():
    layer = GraphConvLayer(8, np.random.default_rng(4))
    row = np.random.default_rng(5).standard_normal(8)
    o = Tensor(np.tile(row, (1, 4, 1)))
    out = layer(o).data[0]
    assert np.allclose(out, out[0], atol=1e-12)


def test_graph_conv_gradcheck():
    rng = np.random.default_rng(6)
    layer = GraphConvLayer(4, np.random.default_rng(7))
    o = Tensor(rng.uniform(-1, 1, (2, 3, 4)), requires_grad=True)
    params = [o, layer.w_a, layer.w_b, layer.w_g]
    w = Tensor(rng.standard_normal((2, 3, 4)))
    fd_gradcheck(lambda: T.sum_axes(T.mul(layer(o), w)), params,
                 rtol=1e-4, probes_per_param=6, rng=rng)


# ------------------------------------------------------------- full encoder


def test_shape_trace():
    cfg = EncoderConfig(l_v=16, l_c=4, l_f=4, r=10, m=64, d=32)
    enc = SemanticEncoder(cfg, heads=4, rng=np.random.default_rng(8))
    o = Tensor(np.zeros((1, 4, 4, 10, 64)))
    f = Tensor(np.zeros((1, 4, 4, 64)))
    pooled = T.mean_pool(o, 3)
    assert pooled.shape == (1, 4, 4, 64)
    assert T.concat([pooled, f], axis=-1).shape == (1, 4, 4, 128)
    assert enc(o, f).shape == (1, 16, 32)


def test_zero_projection_outputs_bias():
    enc = make_encoder()
    enc.proj.weight.data[...] = 0.0
    enc.proj.bias.data[...] = np.arange(4, dtype=float)
    p = SyntheticVideoProvider(TINY, world_seed=9)
    o, f = provider_batch(p, [0], [11])
    out = enc(o, f).data
    assert np.allclose(out, np.arange(4, dtype=float), atol=1e-14)


def test_clip_independence():
    enc = make_encoder(seed=10)
    p = SyntheticVideoProvider(TINY, world_seed=11)
    o, f = provider_batch(p, [1], [12])
    base = enc(o, f).data.copy()
    o2 = o.data.copy()
    o2[:, 1] += 3.0  # perturb clip 1 only
    out = enc(Tensor(o2), f).data
    l_f = TINY.l_f
    assert np.array_equal(out[:, :l_f], base[:, :l_f])          # clip 0 untouched
    assert not np.allclose(out[:, l_f:], base[:, l_f:])


def test_object_permutation_invariance():
    enc = make_encoder(seed=13)
    p = SyntheticVideoProvider(TINY, world_seed=14)
    o, f = provider_batch(p, [3], [15])
    base = enc(o, f).data
    perm = np.random.default_rng(16).permutation(TINY.r)
    o_p = o.data[:, :, :, perm, :]
    out = enc(Tensor(o_p), f).data
    assert np.allclose(out, base, atol=1e-10)


def test_temporal_track_permutation_equivariance():
    enc = make_encoder(seed=17)
    p = SyntheticVideoProvider(TINY, world_seed=18)
    o, _ = provider_batch(p, [2], [19])
    agg = enc.temporal_aggregate(o).data
    perm = np.random.default_rng(20).permutation(TINY.r)
    agg_p = enc.temporal_aggregate(Tensor(o.data[:, :, :, perm, :])).data
    assert np.allclose(agg_p, agg[:, :, :, perm, :], atol=1e-12)


def test_zero_param_temporal_blocks_identity():
    enc = make_encoder(seed=21)
    for block in enc.temporal:
        for name, param in block.named_params("b").items():
            if ".proj." in name or ".ffn." in name:
                param.data[...] = 0.0
    p = SyntheticVideoProvider(TINY, world_seed=22)
    o, _ = provider_batch(p, [0], [23])
    assert np.array_equal(enc.temporal_aggregate(o).data, o.data)


def test_encoder_determinism_and_finiteness():
    enc = make_encoder(seed=24)
    p = SyntheticVideoProvider(TINY, world_seed=25)
    o, f = provider_batch(p, [4], [26])
    y1 = enc(o, f).data
    y2 = enc(o, f).data
    assert np.array_equal(y1, y2)
    big_o = Tensor(np.clip(o.data * 500, -1e3, 1e3))
    big_f = Tensor(np.clip(f.data * 500, -1e3, 1e3))
    assert np.all(np.isfinite(enc(big_o, big_f).data))


def test_encoder_end_to_end_gradcheck():
    rng = np.random.default_rng(27)
    enc = make_encoder(seed=28)
    o = Tensor(rng.uniform(-1, 1, (1, 2, 2, 3, 8)), requires_grad=True)
    f = Tensor(rng.uniform(-1, 1, (1, 2, 2, 8)), requires_grad=True)
    w = Tensor(rng.standard_normal((1, 4, 4)))
    params = [o, f] + list(enc.named_params().values())
    fd_gradcheck(lambda: T.sum_axes(T.mul(enc(o, f), w)), params,
                 rtol=1e-4, probes_per_param=3, rng=rng)
