"""Synthetic VideoQA dataset.

Each task embeds one of five temporal patterns in a synthetic clip; the
candidates name all five patterns in a per-task shuffled order, so text alone
is uninformative (chance accuracy) and answering requires the video content.
Everything regenerates deterministically from (root seed, split, index); the
manifest CSV records the construction for inspection and replay.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .encoder import SyntheticVideoProvider
from .errors import InputError
from .rng import derive_rng, derive_seed_sequence

PAD_ID = 0
SEP_ID = 1
_QUESTION_WORDS = (
    "which", "pattern", "does", "the", "clip", "show",
    "what", "motion", "appears", "here", "identify", "temporal",
)
WORD_IDS = {w: 2 + i for i, w in enumerate(_QUESTION_WORDS)}
CLASS_NAMES = ("pulse", "drift", "sweep", "flicker", "orbit")
CLASS_TOKEN_BASE = 2 + len(_QUESTION_WORDS)
VOCAB_SIZE = 50   # spare ids stay reserved
TEMPLATES = (
    ("which", "pattern", "does", "the", "clip", "show"),
    ("what", "motion", "appears", "here"),
    ("identify", "the", "temporal", "pattern"),
)
SEQ_LEN = max(len(t) for t in TEMPLATES) + 2   # question, separator, answer
N_CLASSES = len(CLASS_NAMES)

MANIFEST_COLUMNS = ("task_id", "class_id", "label", "sample_seed")


@dataclass
class QATask:
    task_id: int
    class_id: int
    label: int
    sample_seed: int
    candidates: tuple[int, ...]     # class id named by each answer slot
    token_ids: np.ndarray           # (b, s) int64
    pad_mask: np.ndarray            # (b, s) float, 1 = real token


def encode_candidates(template: tuple[str, ...], order) -> tuple[np.ndarray, np.ndarray]:
    question = [WORD_IDS[w] for w in template]
    rows = []
    for cls in order:
        seq = question + [SEP_ID, CLASS_TOKEN_BASE + int(cls)]
        rows.append(seq + [PAD_ID] * (SEQ_LEN - len(seq)))
    ids = np.asarray(rows, dtype=np.int64)
    return ids, (ids != PAD_ID).astype(np.float64)


def build_tasks(root_seed: int, count: int, split: str) -> list[QATask]:
    """Deterministic task list; class ids round-robin so the distribution is
    uniform up to rounding."""
    if count < 1:
        raise InputError(f"need at least one task, got {count}")
    tasks = []
    for i in range(count):
        class_id = i % N_CLASSES
        trng = derive_rng(root_seed, f"data.{split}.task", i)
        order = tuple(int(c) for c in trng.permutation(N_CLASSES))
        label = order.index(class_id)
        template = TEMPLATES[int(trng.integers(len(TEMPLATES)))]
        ids, pad = encode_candidates(template, order)
        seed = int(derive_seed_sequence(root_seed, f"data.{split}.video", i).generate_state(1)[0])
        tasks.append(QATask(task_id=i, class_id=class_id, label=label,
                            sample_seed=seed, candidates=order,
                            token_ids=ids, pad_mask=pad))
    return tasks


def batch_videos(provider: SyntheticVideoProvider, tasks) -> tuple[np.ndarray, np.ndarray]:
    """Stack object and frame features: (B, l_c, l_f, r, m), (B, l_c, l_f, m)."""
    pairs = [provider.sample(t.class_id, t.sample_seed) for t in tasks]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def batch_text(tasks) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack token ids, padding masks and labels across tasks."""
    ids = np.stack([t.token_ids for t in tasks])
    pad = np.stack([t.pad_mask for t in tasks])
    labels = np.asarray([t.label for t in tasks], dtype=np.int64)
    return ids, pad, labels


def write_manifest(tasks, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for t in tasks:
            w.writerow([t.task_id, t.class_id, t.label, t.sample_seed])


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]
