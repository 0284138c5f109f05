"""Named-tensor checkpoint archives.

A checkpoint is a zip with a JSON manifest (tensor names, shapes, dtype,
byte order, metadata) and one concatenated little-endian float32 payload.
The format round-trips bit-exactly and is platform independent.
"""

from __future__ import annotations

import json
import zipfile
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_MANIFEST_NAME = "manifest.json"
_PAYLOAD_NAME = "tensors.bin"
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    """Archive is corrupt, truncated, or inconsistent with its manifest."""


@dataclass
class Checkpoint:
    """Named float32 tensors plus free-form metadata.

    Model parameters are stored under their layer names; auxiliary tensors
    (for example pixel statistics) use a ``pixel_stats/`` prefix.
    """

    tensors: "OrderedDict[str, np.ndarray]"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        converted: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, tensor in self.tensors.items():
            converted[name] = np.ascontiguousarray(tensor, dtype=np.float32)
        self.tensors = converted

    def model_tensors(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(
            (name, tensor)
            for name, tensor in self.tensors.items()
            if not name.startswith("pixel_stats/")
        )


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, tensor in checkpoint.tensors.items():
        data = np.ascontiguousarray(tensor, dtype=_DTYPE).tobytes()
        entries.append(
            {"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(data)}
        )
        chunks.append(data)
        offset += len(data)
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32",
        "byte_order": "little",
        "tensors": entries,
        "metadata": checkpoint.metadata,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        archive.writestr(_MANIFEST_NAME, json.dumps(manifest, indent=1))
        archive.writestr(_PAYLOAD_NAME, b"".join(chunks))


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        with zipfile.ZipFile(path, "r") as archive:
            try:
                manifest = json.loads(archive.read(_MANIFEST_NAME))
            except (KeyError, json.JSONDecodeError) as exc:
                raise CheckpointError(f"corrupt manifest in {path}: {exc}") from None
            try:
                payload = archive.read(_PAYLOAD_NAME)
            except KeyError:
                raise CheckpointError(f"missing tensor payload in {path}") from None
    except zipfile.BadZipFile as exc:
        raise CheckpointError(f"not a checkpoint archive: {path} ({exc})") from None

    if manifest.get("dtype") != "float32" or manifest.get("byte_order") != "little":
        raise CheckpointError(f"unsupported tensor encoding in {path}")
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for entry in manifest.get("tensors", []):
        name, shape = entry["name"], tuple(entry["shape"])
        offset, nbytes = entry["offset"], entry["nbytes"]
        expected = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if nbytes != expected:
            raise CheckpointError(
                f"{path}: tensor {name!r} declares shape {shape} but {nbytes} bytes"
            )
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
        flat = np.frombuffer(payload, dtype=_DTYPE, count=expected // _DTYPE.itemsize, offset=offset)
        tensors[name] = flat.reshape(shape).copy()
    return Checkpoint(tensors=tensors, metadata=manifest.get("metadata", {}))
