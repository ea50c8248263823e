"""Seed derivation: every random stream comes from (root seed, purpose label, index).

The label is hashed with crc32 (stable across platforms and runs) and fed into
a numpy SeedSequence together with the root seed and an integer index, so any
stream can be re-derived independently of consumption order elsewhere.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed_sequence(root: int, label: str, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root), zlib.crc32(label.encode("utf-8")), int(index)])


def derive_rng(root: int, label: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(root, label, index))
