"""Checkpoint files.

Layout: ``b"SERM"``, u16 version, u32 header length, UTF-8 JSON header
(config, array names/shapes, scaler, class order), then each array as raw
little-endian float32 in header order.
"""

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from ..features import ScalerParams
from .model import Model, ModelConfig

MAGIC = b"SERM"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


def checkpoint_bytes(model: Model, scaler: ScalerParams | None = None, class_order=None, extra=None):
    state = model.state()
    header = {
        "config": model.config.to_dict(),
        "arrays": [{"name": k, "shape": list(v.shape), "kind": "param" if k in model.params else "buffer"}
                   for k, v in state.items()],
        "scaler": None if scaler is None else scaler.to_dict(),
        "class_order": None if class_order is None else list(class_order),
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blocks = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in state.values())
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + blocks


def save_checkpoint(model, scaler, path, class_order=None, extra=None):
    """Write ``model`` (its config included) and the feature scaler to ``path``."""
    Path(path).write_bytes(checkpoint_bytes(model, scaler, class_order, extra))


def parse_checkpoint(data: bytes):
    if len(data) < _PREFIX.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    end = _PREFIX.size + hlen
    if len(data) < end:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(data[_PREFIX.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    config = ModelConfig.from_dict(header["config"])
    params, buffers = {}, {}
    pos = end
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        nbytes = 4 * count
        if pos + nbytes > len(data):
            raise CheckpointError(f"truncated at array {spec['name']!r}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float32)
        arr = arr.reshape(spec["shape"])
        (params if spec["kind"] == "param" else buffers)[spec["name"]] = arr
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes after the last array")
    scaler = None if header["scaler"] is None else ScalerParams.from_dict(header["scaler"])
    class_order = None if header["class_order"] is None else tuple(header["class_order"])
    return Model(config, params, buffers), scaler, class_order, header.get("extra", {})


def load_checkpoint(path):
    """Return ``(model, scaler, class_order, extra)``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(str(exc)) from None
    return parse_checkpoint(data)
