"""Binary checkpoint container.

Layout, all little-endian:

    magic "MRFN" | u32 version | u32 entry_count
    per entry: u16 name_len | name (UTF-8) | u8 rank | rank * u64 dims
               | payload (f32, C order)

The container stores named f32 arrays and nothing else; model parameters go
in under ``model.<name>``, Adam moments under ``opt.m.<name>`` / ``opt.v.<name>``,
and scalar counters as one-element arrays (``train.step``).  Payloads are
written as f32 regardless of the in-memory dtype, so float32 models round-trip
bitwise.
"""

from __future__ import annotations

import struct
from typing import Dict, Optional

import numpy as np

from .errors import (
    CheckpointMagicError,
    CheckpointParamMismatchError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)

MAGIC = b"MRFN"
VERSION = 1


def write_entries(path, entries: Dict[str, np.ndarray]):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries.items():
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"entry name too long: {name[:40]}...")
            arr = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def read_entries(path) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(n, what):
        nonlocal offset
        if offset + n > len(blob):
            raise CheckpointTruncatedError(
                f"file ends inside {what} at byte {offset} (need {n} more)"
            )
        piece = blob[offset : offset + n]
        offset += n
        return piece

    offset = 0
    if take(4, "magic") != MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic, not a checkpoint file")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, reader supports {VERSION}"
        )
    entries: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims")) if rank else ()
        n_items = int(np.prod(dims)) if rank else 1
        payload = take(4 * n_items, f"payload of {name}")
        entries[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return entries


def save_checkpoint(path, model, step: int = 0, optimizer=None):
    entries = {f"model.{k}": v for k, v in model.state_dict().items()}
    entries["train.step"] = np.array([step], dtype=np.float32)
    if optimizer is not None:
        for k, v in optimizer.state_entries().items():
            entries[f"opt.{k}"] = v
    write_entries(path, entries)


def load_checkpoint(path, model, optimizer=None) -> int:
    """Restore parameters (and optimizer state); returns the stored step."""
    entries = read_entries(path)
    stored = {k[len("model."):]: v for k, v in entries.items()
              if k.startswith("model.")}
    mine = dict(model.named_parameters())
    missing = sorted(set(mine) - set(stored))
    extra = sorted(set(stored) - set(mine))
    if missing or extra:
        raise CheckpointParamMismatchError(
            f"{path}: parameter names do not match the model; "
            f"missing={missing[:5]} extra={extra[:5]}"
        )
    for name, p in mine.items():
        arr = stored[name]
        if arr.shape != p.data.shape:
            raise CheckpointParamMismatchError(
                f"{path}: shape of {name} is {arr.shape}, model wants {p.data.shape}"
            )
        p.data = arr.astype(p.data.dtype)
    if optimizer is not None:
        opt_entries = {k[len("opt."):]: v for k, v in entries.items()
                       if k.startswith("opt.")}
        optimizer.load_state_entries(opt_entries)
    step_arr = entries.get("train.step")
    return int(step_arr[0]) if step_arr is not None else 0
