"""Versioned little-endian binary checkpoints.

Layout (all integers little-endian):
    magic "CDGN" | u32 version | u32 nparams
    per parameter: u32 name length | UTF-8 name | u32 rank | u32*rank extents
                   | float32 raw data
    u8 has_optimizer_state
    if set: u32 epoch | u64 adam step t
            per parameter (same order): float32 first-moment, float32 second-moment

Round-trips are bitwise exact for float32 parameters.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .module import Module

MAGIC = b"CDGN"
VERSION = 1


def _write_array(buf: list[bytes], arr: np.ndarray) -> None:
    buf.append(arr.astype("<f4", copy=False).tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint file")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def save_checkpoint(named_params: list[tuple[str, np.ndarray]], path: str | Path,
                    optimizer_state: dict | None = None) -> None:
    """Write atomically: build in a temp file, rename on success."""
    buf: list[bytes] = [MAGIC, struct.pack("<II", VERSION, len(named_params))]
    for name, arr in named_params:
        nb = name.encode("utf-8")
        buf.append(struct.pack("<I", len(nb)))
        buf.append(nb)
        buf.append(struct.pack("<I", arr.ndim))
        buf.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        _write_array(buf, arr)
    if optimizer_state is None:
        buf.append(b"\x00")
    else:
        buf.append(b"\x01")
        buf.append(struct.pack("<IQ", optimizer_state["epoch"], optimizer_state["t"]))
        for m, v in zip(optimizer_state["m"], optimizer_state["v"]):
            _write_array(buf, m)
            _write_array(buf, v)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(buf))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[list[tuple[str, np.ndarray]], dict | None]:
    """Returns ([(name, float32 array)], optimizer state dict or None)."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    nparams = r.u32()
    params: list[tuple[str, np.ndarray]] = []
    for _ in range(nparams):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).copy()
        params.append((name, arr))
    state = None
    if r.u8():
        epoch = r.u32()
        t = r.u64()
        m, v = [], []
        for _, arr in params:
            m.append(np.frombuffer(r.take(4 * arr.size), dtype="<f4")
                     .reshape(arr.shape).copy())
            v.append(np.frombuffer(r.take(4 * arr.size), dtype="<f4")
                     .reshape(arr.shape).copy())
        state = {"epoch": epoch, "t": t, "m": m, "v": v}
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return params, state


def apply_to_model(model: Module, params: list[tuple[str, np.ndarray]]) -> None:
    """Load arrays into a model in place, validating names and shapes."""
    current = dict(model.named_parameters())
    loaded = dict(params)
    if set(current) != set(loaded):
        missing = sorted(set(current) ^ set(loaded))
        raise CheckpointError(f"parameter set mismatch, first difference: {missing[0]}")
    for name, p in model.named_parameters():
        arr = loaded[name]
        if arr.shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for parameter {name}: checkpoint has {arr.shape}, "
                f"model expects {p.data.shape}")
        p.data = arr.astype(p.data.dtype)
