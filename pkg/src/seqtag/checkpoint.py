"""Model checkpoints.

One file: magic bytes "SQTG", a little-endian u32 format version, a
u64-length-prefixed JSON manifest (configuration echo, vocabularies,
and a tensor registry of name/shape/byte offset), then the payload of
raw little-endian IEEE-754 float64 values per tensor in registry
order. Round trips are bit-exact, so a loaded model reproduces
predictions exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from seqtag.corpus import Vocabulary
from seqtag.exceptions import DataError
from seqtag.network import Model, NetworkConfig

MAGIC = b"SQTG"
VERSION = 1


class CheckpointError(DataError):
    pass


def save_model(model: Model, path: str | Path) -> None:
    registry = []
    payload = bytearray()
    for name, tensor in model.params.items():
        arr = np.ascontiguousarray(tensor.data, dtype="<f8")
        registry.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(arr.tobytes())
    manifest = {
        "config": model.config.to_json(),
        "vocab": model.vocab.to_json(),
        "tensors": registry,
        "payload_bytes": len(payload),
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<I", VERSION))
        out.write(struct.pack("<Q", len(blob)))
        out.write(blob)
        out.write(payload)


def load_model(path: str | Path) -> Model:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    if len(blob) < 16:
        raise CheckpointError(f"truncated checkpoint: {path}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (manifest_len,) = struct.unpack("<Q", blob[8:16])
    manifest_end = 16 + manifest_len
    if len(blob) < manifest_end:
        raise CheckpointError(f"truncated checkpoint manifest: {path}")
    manifest = json.loads(blob[16:manifest_end].decode("utf-8"))
    payload = blob[manifest_end:]
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError(
            f"payload length {len(payload)} disagrees with manifest "
            f"({manifest['payload_bytes']} bytes declared)"
        )

    config = NetworkConfig.from_json(manifest["config"])
    vocab = Vocabulary.from_json(manifest["vocab"])
    model = Model(config, vocab, np.random.default_rng(0))

    declared = {entry["name"] for entry in manifest["tensors"]}
    built = set(model.params.keys())
    if declared != built:
        missing = sorted(built - declared)
        extra = sorted(declared - built)
        raise CheckpointError(
            f"tensor registry disagrees with the configuration "
            f"(missing: {missing}, unexpected: {extra})"
        )
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 8 * size
        if end > len(payload):
            raise CheckpointError(f"tensor {entry['name']!r} exceeds the payload")
        tensor = model.params[entry["name"]]
        if tensor.data.shape != shape:
            raise CheckpointError(
                f"tensor {entry['name']!r} has shape {shape} in the checkpoint "
                f"but {tensor.data.shape} in the configuration"
            )
        tensor.data = np.frombuffer(payload[start:end], dtype="<f8").reshape(shape).copy()
    return model
