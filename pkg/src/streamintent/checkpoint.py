"""Binary checkpoint format.

Layout (little-endian)::

    b"SINT" | u16 version | u32 meta_len | meta (canonical JSON, UTF-8)
    | u32 n_tensors | n_tensors x (u16 name_len | name | u32 rows | u32 cols | f32[rows*cols])

Metadata carries the model config, vocabulary (id order) and class list.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Vocabulary
from .models import ModelConfig, build_model

MAGIC = b"SINT"
VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


@dataclass
class Checkpoint:
    model: object
    vocab: Vocabulary
    classes: list[str]

    @property
    def config(self) -> ModelConfig:
        return self.model.cfg


def _canonical(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def to_bytes(model, vocab: Vocabulary, classes: Sequence[str]) -> bytes:
    meta = {"config": model.cfg.to_dict(), "kind": model.kind, "vocabulary": vocab.tokens, "classes": list(classes)}
    mb = _canonical(meta)
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(mb)), mb]
    params = model.parameters()
    parts.append(struct.pack("<I", len(params)))
    for p in params:
        name = p.name.encode("utf-8")
        rows, cols = p.shape
        parts += [struct.pack("<H", len(name)), name, struct.pack("<II", rows, cols),
                  np.ascontiguousarray(p.value, dtype="<f4").tobytes()]
    return b"".join(parts)


def save_checkpoint(model, vocab: Vocabulary, classes: Sequence[str], path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(model, vocab, classes))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint while reading {what}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)", 0)
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", 4)
    (mlen,) = r.unpack("<I", "metadata length")
    at = r.pos
    try:
        meta = json.loads(r.take(mlen, "metadata").decode("utf-8"))
        cfg = ModelConfig.from_dict(meta["config"])
        vocab = Vocabulary(list(meta["vocabulary"]))
        classes = list(meta["classes"])
    except CheckpointError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt metadata ({exc})", at) from exc
    tensors = {}
    (count,) = r.unpack("<I", "tensor count")
    for _ in range(count):
        (nlen,) = r.unpack("<H", "tensor name length")
        name = r.take(nlen, "tensor name").decode("utf-8", errors="replace")
        rows, cols = r.unpack("<II", f"shape of {name}")
        at = r.pos
        raw = r.take(4 * rows * cols, f"values of {name}")
        tensors[name] = (np.frombuffer(raw, dtype="<f4").reshape(rows, cols), at)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last tensor", r.pos)
    model = build_model(cfg, np.random.default_rng(0))
    params = model.named_parameters()
    if set(params) != set(tensors):
        raise CheckpointError(f"tensor set mismatch: {sorted(set(params) ^ set(tensors))}")
    for name, p in params.items():
        values, at = tensors[name]
        if values.shape != p.shape:
            raise CheckpointError(f"shape mismatch for {name}: {values.shape} vs {p.shape}", at)
        p.value[...] = values.astype(p.value.dtype)
    return Checkpoint(model, vocab, classes)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
