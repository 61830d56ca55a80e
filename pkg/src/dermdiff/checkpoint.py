"""DT2M checkpoint container.

Layout: 4-byte magic ``DT2M``, little-endian u32 format version, u64 header
length, canonical JSON header, then the payload of float32 little-endian
tensor data.  Tensor names are ordered lexicographically and offsets are
assigned in that order, so saving the same object twice produces identical
bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import CHECKPOINT_FORMAT_VERSION

MAGIC = b"DT2M"


class CheckpointError(Exception):
    """Base class for unreadable checkpoint files."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


KINDS = ("model", "lora", "classifier")


@dataclass
class Checkpoint:
    kind: str
    tensors: dict[str, np.ndarray]
    meta: dict
    version: int = CHECKPOINT_FORMAT_VERSION


def save_checkpoint(path, kind: str, tensors: dict[str, np.ndarray], meta: dict) -> None:
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    names = sorted(tensors)
    entries = {}
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        entries[name] = {"shape": list(arr.shape), "offset": offset}
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"kind": kind, "meta": meta, "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic (not a DT2M checkpoint)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, expected {CHECKPOINT_FORMAT_VERSION}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise TruncatedError(f"{path}: header truncated ({len(raw) - 16} of {hlen} bytes)")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc
    payload = raw[16 + hlen :]
    tensors = {}
    for name, ent in header["tensors"].items():
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start, end = ent["offset"], ent["offset"] + 4 * count
        if end > len(payload):
            raise TruncatedError(f"{path}: payload truncated for tensor {name!r}")
        tensors[name] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()
    return Checkpoint(kind=header["kind"], tensors=tensors, meta=header["meta"], version=version)


# -- typed save/load helpers -------------------------------------------------


def save_model(path, model, extra_meta: dict | None = None) -> None:
    from .conditioning import DEFAULT_VOCAB

    meta = {
        "architecture": model.descriptor.to_meta(),
        "vocabulary": list(DEFAULT_VOCAB.tokens),
    }
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, "model", model.state_arrays(), meta)


def load_model(path):
    from .denoiser import DenoiserModel, Descriptor

    ck = load_checkpoint(path)
    if ck.kind != "model":
        raise CheckpointError(f"{path}: expected kind 'model', got {ck.kind!r}")
    model = DenoiserModel(Descriptor.from_meta(ck.meta["architecture"]))
    model.load_state(ck.tensors)
    return model, ck.meta


def save_adapter(path, adapter, extra_meta: dict | None = None) -> None:
    tensors = {}
    for name, (a, b) in adapter.deltas.items():
        tensors[f"{name}.lora.A"] = a.data
        tensors[f"{name}.lora.B"] = b.data
    meta = {"rank": adapter.rank, "alpha": adapter.alpha, "targets": list(adapter.targets)}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, "lora", tensors, meta)


def load_adapter(path):
    from . import tensor as T
    from .lora import LoraAdapter

    ck = load_checkpoint(path)
    if ck.kind != "lora":
        raise CheckpointError(f"{path}: expected kind 'lora', got {ck.kind!r}")
    adapter = LoraAdapter(rank=ck.meta["rank"], alpha=ck.meta["alpha"], targets=tuple(ck.meta["targets"]))
    for name in adapter.targets:
        a = T.Tensor(ck.tensors[f"{name}.lora.A"], requires_grad=True)
        b = T.Tensor(ck.tensors[f"{name}.lora.B"], requires_grad=True)
        adapter.deltas[name] = (a, b)
    return adapter, ck.meta
