"""Checkpoint container: JSON manifest plus a little-endian float64 blob.

Layout::

    b"JNTXCKPT" | uint32 LE format version | uint64 LE manifest length | manifest | blob

The manifest is canonical JSON (sorted keys, no whitespace) holding the
model config, vocabulary, tag and relation label lists, per-tensor
name/shape/offset, and the SHA-256 of the blob. Serialization of a loaded
checkpoint reproduces the original bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .data import Vocab
from .model import JointModel, ModelConfig

MAGIC = b"JNTXCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    """Unreadable, truncated, or corrupted checkpoint."""


def _manifest(model: JointModel, blob: bytes, entries: list[dict]) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "mode": model.config.mode,
        "config": model.config_dict(),
        "vocab": model.vocab.to_dict(),
        "labels": model.labels,
        "relation_labels": model.relations,
        "tensors": entries,
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
    }


def checkpoint_bytes(model: JointModel) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, t in model.store.items():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "trainable": bool(t.requires_grad)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = json.dumps(_manifest(model, blob, entries), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, FORMAT_VERSION, len(manifest)) + manifest + blob


def save_checkpoint(model: JointModel, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def checkpoint_from_bytes(data: bytes) -> JointModel:
    if len(data) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
    start = _HEADER.size
    try:
        manifest = json.loads(data[start : start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupted manifest: {e}") from None
    blob = data[start + mlen :]
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(f"truncated blob: {len(blob)} of {manifest['blob_bytes']} bytes")
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CheckpointError("checksum mismatch: blob is corrupted")

    config = ModelConfig.from_dict(manifest["config"])
    vocab = Vocab.from_dict(manifest["vocab"])
    model = JointModel(config, vocab, rng=np.random.default_rng(0))
    if model.labels != manifest["labels"] or model.relations != manifest["relation_labels"]:
        raise CheckpointError("label inventory in manifest does not match the rebuilt model")
    names = [e["name"] for e in manifest["tensors"]]
    if names != list(model.store):
        raise CheckpointError("tensor list in manifest does not match the model layout")
    for e in manifest["tensors"]:
        t = model.store[e["name"]]
        shape = tuple(e["shape"])
        if shape != t.shape:
            raise CheckpointError(f"tensor {e['name']}: shape {shape} != expected {t.shape}")
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=e["offset"]).reshape(shape)
        t.data[...] = arr
        t.requires_grad = bool(e["trainable"])
    return model


def load_checkpoint(path) -> JointModel:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    return checkpoint_from_bytes(data)
