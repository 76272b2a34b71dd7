"""Versioned binary checkpoints: JSON header plus raw float64 array payload.

Layout: ``magic(4) | version(u32) | header_len(u64) | blob_len(u64) |
crc32(u32) | header JSON | array blob``. The CRC covers header and blob, so
a truncated or bit-flipped file is rejected before any state is built.
Arrays are little-endian float64 with no transformation, which makes a
save/load round trip bit-identical and lets a resumed run continue exactly
where an uninterrupted one would be.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import PersistenceError
from ..model import MlpSpec

__all__ = ["Checkpoint", "load_checkpoint", "save_checkpoint", "spec_hash"]

MAGIC = b"PJTN"
VERSION = 1
_HEADER_FMT = "<4sIQQI"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


def spec_hash(spec: MlpSpec) -> str:
    blob = json.dumps(spec.canonical(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Checkpoint:
    model_spec: MlpSpec
    iteration: int = 0
    values: dict[str, np.ndarray] = field(default_factory=dict)
    anchors: dict[str, np.ndarray] = field(default_factory=dict)
    prev_unconstrained: dict[str, np.ndarray] = field(default_factory=dict)
    gammas: dict[str, dict] = field(default_factory=dict)      # name -> scalar state
    optimizer: dict = field(default_factory=dict)              # kind/hyper + tensor buffers
    rng: dict = field(default_factory=dict)                    # seed bookkeeping
    extra: dict = field(default_factory=dict)                  # counters, method, notes

    @property
    def spec_hash(self) -> str:
        return spec_hash(self.model_spec)


def _collect_arrays(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for group, tensors in (
        ("values", ckpt.values),
        ("anchors", ckpt.anchors),
        ("prev", ckpt.prev_unconstrained),
    ):
        for name, arr in tensors.items():
            arrays[f"{group}/{name}"] = np.asarray(arr, dtype=np.float64)
    for name, arr in ckpt.optimizer.get("tensors", {}).items():
        arrays[f"opt/{name}"] = np.asarray(arr, dtype=np.float64)
    return arrays


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays = _collect_arrays(ckpt)
    directory = []
    blob_parts = []
    offset = 0
    for key in sorted(arrays):
        arr = np.ascontiguousarray(arrays[key], dtype="<f8")
        raw = arr.tobytes()
        directory.append({"key": key, "shape": list(arr.shape), "offset": offset})
        blob_parts.append(raw)
        offset += len(raw)
    blob = b"".join(blob_parts)

    header_obj = {
        "spec": ckpt.model_spec.canonical(),
        "spec_hash": ckpt.spec_hash,
        "iteration": int(ckpt.iteration),
        "gammas": ckpt.gammas,
        "optimizer_meta": {k: v for k, v in ckpt.optimizer.items() if k != "tensors"},
        "rng": ckpt.rng,
        "extra": ckpt.extra,
        "arrays": directory,
    }
    header = json.dumps(header_obj, sort_keys=True).encode("utf-8")
    crc = zlib.crc32(header + blob) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(struct.pack(_HEADER_FMT, MAGIC, VERSION, len(header), len(blob), crc))
        f.write(header)
        f.write(blob)


def _split_key(key: str) -> tuple[str, str]:
    group, _, name = key.partition("/")
    return group, name


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except FileNotFoundError:
        raise PersistenceError(f"checkpoint {path} does not exist") from None
    if len(data) < _HEADER_SIZE:
        raise PersistenceError("checkpoint truncated: missing fixed header")
    magic, version, header_len, blob_len, crc = struct.unpack(
        _HEADER_FMT, data[:_HEADER_SIZE]
    )
    if magic != MAGIC:
        raise PersistenceError(f"not a checkpoint file (magic {magic!r})")
    if version != VERSION:
        raise PersistenceError(f"checkpoint version {version} unsupported (want {VERSION})")
    body = data[_HEADER_SIZE:]
    if len(body) != header_len + blob_len:
        raise PersistenceError(
            f"checkpoint truncated: expected {header_len + blob_len} body bytes, got {len(body)}"
        )
    header, blob = body[:header_len], body[header_len:]
    if (zlib.crc32(header + blob) & 0xFFFFFFFF) != crc:
        raise PersistenceError("checkpoint checksum mismatch")

    obj = json.loads(header.decode("utf-8"))
    spec = MlpSpec(
        widths=tuple(obj["spec"]["widths"]),
        activations=tuple(obj["spec"]["activations"]),
        loss=obj["spec"]["loss"],
    )
    ckpt = Checkpoint(
        model_spec=spec,
        iteration=int(obj["iteration"]),
        gammas={k: dict(v) for k, v in obj["gammas"].items()},
        optimizer=dict(obj["optimizer_meta"]),
        rng=dict(obj["rng"]),
        extra=dict(obj["extra"]),
    )
    if obj["spec_hash"] != ckpt.spec_hash:
        raise PersistenceError("model spec hash mismatch")
    opt_tensors: dict[str, np.ndarray] = {}
    for entry in obj["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(blob):
            raise PersistenceError("checkpoint array directory exceeds payload")
        arr = np.frombuffer(blob[start:end], dtype="<f8").reshape(shape).copy()
        group, name = _split_key(entry["key"])
        if group == "values":
            ckpt.values[name] = arr
        elif group == "anchors":
            ckpt.anchors[name] = arr
        elif group == "prev":
            ckpt.prev_unconstrained[name] = arr
        elif group == "opt":
            opt_tensors[name] = arr
        else:
            raise PersistenceError(f"unknown array group {group!r}")
    ckpt.optimizer["tensors"] = opt_tensors
    return ckpt
