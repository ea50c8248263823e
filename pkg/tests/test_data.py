import collections

import numpy as np
import pytest

from semlink import data as D
from semlink.encoder import EncoderConfig, SemanticEncoder, SyntheticVideoProvider
from semlink.errors import InputError
from semlink.tensor import Tensor


def test_build_tasks_deterministic():
    a = D.build_tasks(5, 20, "train")
    b = D.build_tasks(5, 20, "train")
    for ta, tb in zip(a, b):
        assert ta.sample_seed == tb.sample_seed
        assert ta.candidates == tb.candidates
        assert np.array_equal(ta.token_ids, tb.token_ids)
    c = D.build_tasks(5, 20, "test")
    assert any(ta.sample_seed != tc.sample_seed for ta, tc in zip(a, c))
    d = D.build_tasks(6, 20, "train")
    assert any(ta.sample_seed != td.sample_seed for ta, td in zip(a, d))


def test_class_distribution_uniform():
    tasks = D.build_tasks(1, 103, "train")
    counts = collections.Counter(t.class_id for t in tasks)
    assert max(counts.values()) - min(counts.values()) <= 1
    assert all(0 <= t.label < D.N_CLASSES for t in tasks)


def test_candidates_cover_all_classes_and_label_points_home():
    for t in D.build_tasks(2, 50, "train"):
        assert sorted(t.candidates) == list(range(D.N_CLASSES))
        assert t.candidates[t.label] == t.class_id
        answer_token = t.token_ids[t.label][t.pad_mask[t.label] == 1][-1]
        assert answer_token == D.CLASS_TOKEN_BASE + t.class_id


def test_candidate_order_varies():
    orders = {t.candidates for t in D.build_tasks(3, 100, "train")}
    assert len(orders) > 10


def test_sequence_layout():
    for t in D.build_tasks(4, 10, "train"):
        ids, pad = t.token_ids, t.pad_mask
        assert ids.shape == (D.N_CLASSES, D.SEQ_LEN)
        assert np.array_equal(pad, (ids != D.PAD_ID).astype(float))
        for row, prow in zip(ids, pad):
            real = row[prow == 1]
            assert real[-2] == D.SEP_ID
            assert D.CLASS_TOKEN_BASE <= real[-1] < D.CLASS_TOKEN_BASE + D.N_CLASSES
            # padding only as a suffix
            assert np.all(np.diff(prow) <= 0)


def test_build_tasks_rejects_empty():
    with pytest.raises(InputError):
        D.build_tasks(1, 0, "train")


def test_manifest_roundtrip(tmp_path):
    tasks = D.build_tasks(7, 15, "train")
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    D.write_manifest(tasks, p1)
    D.write_manifest(tasks, p2)
    assert p1.read_bytes() == p2.read_bytes()
    rows = D.read_manifest(p1)
    assert len(rows) == 15
    assert list(rows[0]) == list(D.MANIFEST_COLUMNS)
    for t, row in zip(tasks, rows):
        assert int(row["task_id"]) == t.task_id
        assert int(row["class_id"]) == t.class_id
        assert int(row["label"]) == t.label
        assert int(row["sample_seed"]) == t.sample_seed
    text = p1.read_bytes().decode()
    assert "\r" not in text and text.endswith("\n")


def test_batch_helpers_shapes():
    cfg = EncoderConfig()
    provider = SyntheticVideoProvider(cfg, world_seed=9)
    tasks = D.build_tasks(9, 6, "train")
    o, f = D.batch_videos(provider, tasks)
    assert o.shape == (6, cfg.l_c, cfg.l_f, cfg.r, cfg.m)
    assert f.shape == (6, cfg.l_c, cfg.l_f, cfg.m)
    ids, pad, labels = D.batch_text(tasks)
    assert ids.shape == (6, D.N_CLASSES, D.SEQ_LEN)
    assert labels.shape == (6,)
    assert ids.max() < D.VOCAB_SIZE


def test_pipeline_smoke_provider_to_encoder():
    cfg = EncoderConfig()
    provider = SyntheticVideoProvider(cfg, world_seed=10)
    enc = SemanticEncoder(cfg, heads=4, rng=np.random.default_rng(11))
    tasks = D.build_tasks(12, 3, "train")
    o, f = D.batch_videos(provider, tasks)
    y_v = enc(Tensor(o), Tensor(f))
    assert y_v.shape == (3, cfg.l_v, cfg.d)
    assert np.all(np.isfinite(y_v.data))


def linear_probe_accuracy(train_n=2000, test_n=500, world_seed=13, data_seed=14):
    """Independent learnability oracle: a nearest-centroid discriminant (a
    direct linear classifier, argmax of x . mu_c - |mu_c|^2 / 2) on raw frame
    features must solve the task almost perfectly."""
    cfg = EncoderConfig()
    provider = SyntheticVideoProvider(cfg, world_seed=world_seed)

    def features(tasks):
        return np.asarray([provider.sample(t.class_id, t.sample_seed)[1].reshape(-1)
                           for t in tasks])

    train = D.build_tasks(data_seed, train_n, "train")
    test = D.build_tasks(data_seed, test_n, "test")
    x_tr, y_tr = features(train), np.asarray([t.class_id for t in train])
    mu = np.stack([x_tr[y_tr == c].mean(axis=0) for c in range(D.N_CLASSES)])
    disc = features(test) @ mu.T - 0.5 * (mu * mu).sum(axis=1)
    truth = np.asarray([t.class_id for t in test])
    return float((disc.argmax(axis=1) == truth).mean())


def test_linear_probe_on_provider_features():
    assert linear_probe_accuracy() >= 0.95
