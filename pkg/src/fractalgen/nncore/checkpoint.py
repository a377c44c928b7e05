"""Binary checkpoint files.

Layout (all integers little-endian)::

    8 bytes   magic  b"FGCKPT\\x00\\x00"
    u32       format version
    u32       header length in bytes
    ...       UTF-8 JSON header: model_id, seed, step, epoch and a tensor index
    ...       raw tensor payloads in index order, little-endian float32, C order

The random streams are counter-based (seeded from ``seed``, ``step`` and
``epoch``), so those three integers are the complete RNG state.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .state import ModelState

MAGIC = b"FGCKPT\x00\x00"
VERSION = 1
_GROUPS = ("params", "velocity", "buffers")


def checkpoint_bytes(state: ModelState) -> bytes:
    index = []
    blobs = []
    for group in _GROUPS:
        for name in sorted(getattr(state, group)):
            arr = np.ascontiguousarray(getattr(state, group)[name], dtype="<f4")
            index.append({"group": group, "name": name, "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
    header = {
        "model_id": state.model_id,
        "seed": state.seed,
        "step": state.step,
        "epoch": state.epoch,
        "tensors": index,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + b"".join(blobs)


def state_from_bytes(data: bytes) -> ModelState:
    if len(data) < 16 or data[:8] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(data[16 : 16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    groups: dict[str, dict[str, np.ndarray]] = {g: {} for g in _GROUPS}
    offset = 16 + hlen
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise FormatError("checkpoint truncated")
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape)
        groups[entry["group"]][entry["name"]] = arr.astype(np.float32)
        offset += nbytes
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after checkpoint payload")
    return ModelState(
        groups["params"],
        groups["velocity"],
        groups["buffers"],
        seed=int(header["seed"]),
        step=int(header["step"]),
        epoch=int(header["epoch"]),
        model_id=str(header["model_id"]),
    )


def save_checkpoint(path: str | os.PathLike, state: ModelState) -> Path:
    """Atomic write: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(state))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | os.PathLike) -> ModelState:
    return state_from_bytes(Path(path).read_bytes())
