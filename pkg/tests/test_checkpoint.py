"""Container format: canonical bytes, roundtrip fidelity, corruption handling."""

import numpy as np
import pytest

import semlink.checkpoint as C
from semlink.errors import CheckpointError
from semlink.tensor import Tensor


def sample_params(rng):
    return {
        "enc.w": rng.standard_normal((4, 6)),
        "jsc.enc.block1.rate.proj.w_qkv": rng.standard_normal((8, 24)),
        "fuser.text.table": rng.standard_normal((50, 8)),
        "jsc.dec.compensation": rng.standard_normal(8),
    }


def test_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    params = sample_params(rng)
    path = tmp_path / "model.ckpt"
    C.save_checkpoint(path, params, seed=123, meta={"stage": "s1"})
    loaded = C.load_checkpoint(path)
    assert set(loaded.params) == set(params)
    for name, arr in params.items():
        assert loaded.params[name].dtype == np.float64
        assert np.array_equal(loaded.params[name], arr)
    assert loaded.meta["seed"] == 123
    assert loaded.meta["stage"] == "s1"
    assert loaded.meta["format_version"] == C.FORMAT_VERSION
    assert "1/fan_in" in loaded.meta["init"]
    assert "adam" in loaded.meta["optimizer"]


def test_serialization_is_canonical(tmp_path):
    rng = np.random.default_rng(1)
    params = sample_params(rng)
    shuffled = {k: params[k] for k in reversed(list(params))}
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    C.save_checkpoint(a, params, seed=7)
    C.save_checkpoint(b, shuffled, seed=7)
    assert a.read_bytes() == b.read_bytes()


def test_accepts_grad_tensors_and_scalars(tmp_path):
    path = tmp_path / "t.ckpt"
    C.save_checkpoint(path, {"w": Tensor(np.arange(6.0).reshape(2, 3)),
                             "s": np.float64(2.5)}, seed=0)
    loaded = C.load_checkpoint(path)
    assert np.array_equal(loaded.params["w"], np.arange(6.0).reshape(2, 3))
    # 0-d values are stored as length-1 vectors
    assert loaded.params["s"].shape == (1,)
    assert loaded.params["s"][0] == 2.5


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        C.load_checkpoint(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "full.ckpt"
    C.save_checkpoint(path, {"w": np.ones((3, 3))}, seed=0)
    blob = path.read_bytes()
    clipped = tmp_path / "clipped.ckpt"
    clipped.write_bytes(blob[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        C.load_checkpoint(clipped)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "full.ckpt"
    C.save_checkpoint(path, {"w": np.ones(4)}, seed=0)
    padded = tmp_path / "padded.ckpt"
    padded.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        C.load_checkpoint(padded)


def test_missing_file_raises(tmp_path):
    with pytest.raises(CheckpointError, match="cannot open"):
        C.load_checkpoint(tmp_path / "nope.ckpt")


def test_load_into_strict_and_shapes(tmp_path):
    model = {"a": Tensor(np.zeros((2, 2))), "b": Tensor(np.zeros(3))}
    stored = {"a": np.ones((2, 2)), "b": np.full(3, 2.0)}
    C.load_into(model, stored)
    assert np.array_equal(model["a"].data, np.ones((2, 2)))
    assert np.array_equal(model["b"].data, np.full(3, 2.0))

    with pytest.raises(CheckpointError, match="mismatch"):
        C.load_into(model, {"a": np.ones((2, 2))})
    with pytest.raises(CheckpointError, match="shape"):
        C.load_into(model, {"a": np.ones((2, 3)), "b": np.zeros(3)})


def test_load_into_partial():
    model = {"a": Tensor(np.zeros(2)), "b": Tensor(np.zeros(2))}
    C.load_into(model, {"a": np.ones(2)}, strict=False)
    assert np.array_equal(model["a"].data, np.ones(2))
    assert np.array_equal(model["b"].data, np.zeros(2))


def test_full_model_name_roundtrip(tmp_path):
    """Every live model parameter survives the container under its dotted name."""
    from semlink.codec import JSCCodec
    codec = JSCCodec(3, 8, 2, 2, np.random.default_rng(5))
    named = codec.named_params()
    path = tmp_path / "codec.ckpt"
    C.save_checkpoint(path, named, seed=5)
    loaded = C.load_checkpoint(path)
    assert set(loaded.params) == set(named)
    fresh = JSCCodec(3, 8, 2, 2, np.random.default_rng(99))
    C.load_into(fresh.named_params(), loaded.params)
    for name, p in codec.named_params().items():
        assert np.array_equal(fresh.named_params()[name].data, p.data), name
