"""Versioned binary container for named parameter arrays.

File layout (all integers little-endian, unsigned):

    magic    8 bytes   b"SLNKCKPT"
    version  u32
    meta     u32 byte length, then canonical JSON (sorted keys, no spaces)
    count    u32
    entries, sorted by parameter name:
        name  u16 byte length, then UTF-8 bytes
        ndim  u8, followed by ndim u32 dims
        data  float64 little-endian, C order

Sorting plus canonical JSON makes serialization a pure function of the
content, so equal parameter sets produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError

MAGIC = b"SLNKCKPT"
FORMAT_VERSION = 1

# recorded in every header so a file is self-describing
INIT_RECIPE = ("normal(0, 1/fan_in) weights, unit-variance lookup tables, "
               "zero biases, unit layer-norm gain")
OPTIMIZER_RECIPE = "adam beta1=0.9 beta2=0.999 eps=1e-8, grad clip 5.0"


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def _as_array(value) -> np.ndarray:
    data = getattr(value, "data", value)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


def save_checkpoint(path, params: dict, *, seed: int, meta: dict | None = None) -> None:
    """Write `params` (name -> array or grad tensor) with provenance metadata."""
    header = {"format_version": FORMAT_VERSION, "seed": int(seed),
              "init": INIT_RECIPE, "optimizer": OPTIMIZER_RECIPE}
    if meta:
        header.update(meta)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    names = sorted(params)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.ascontiguousarray(_as_array(params[name]))
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path) -> Checkpoint:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint: {exc}") from exc
    with fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4, "meta length"))
        try:
            meta = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from exc
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "entry count"))
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "shape"))
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            raw = _read_exact(fh, 8 * size, f"data of {name}")
            params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after last checkpoint entry")
    return Checkpoint(params=params, meta=meta, version=version)


def load_into(model_params: dict, stored: dict[str, np.ndarray], *, strict: bool = True) -> None:
    """Copy stored arrays into live grad tensors, matching names and shapes.

    strict requires identical name sets and shapes; non-strict loads the
    name-and-shape-compatible intersection (used when restoring a checkpoint
    into a differently configured assembly, e.g. one whose rate predictors
    grew an extra conditioning column).
    """
    if strict:
        missing = sorted(set(model_params) - set(stored))
        extra = sorted(set(stored) - set(model_params))
        if missing or extra:
            raise CheckpointError(
                f"parameter set mismatch: missing {missing[:4]}, extra {extra[:4]}")
        names = list(model_params)
    else:
        names = [n for n in model_params if n in stored
                 and tuple(model_params[n].data.shape) == stored[n].shape]
    for name in names:
        target = model_params[name]
        arr = stored[name]
        if tuple(target.data.shape) != tuple(arr.shape):
            raise CheckpointError(
                f"shape mismatch for {name}: model {target.data.shape} vs file {arr.shape}")
        target.data[...] = arr
