"""Flat binary parameter checkpoints.

Layout (little-endian)::

    b"MSDW" | u32 version | u32 count
    count x ( u32 name_len | name (UTF-8) | u32 rank | rank x u64 extent | f64 payload )
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"MSDW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(params: dict[str, Tensor | np.ndarray], path) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, t in params.items():
        arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path, requires_grad: bool = False) -> dict[str, Tensor]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(
                f"{path}: truncated at byte {pos} reading {what}: need {n} bytes, {len(buf) - pos} left"
            )
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte 0, expected {MAGIC!r}")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    params: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "extents"))
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(8 * n, f"payload of '{name}'"), dtype="<f8").reshape(shape)
        params[name] = Tensor(data.astype(np.float64), requires_grad=requires_grad)
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes at byte {pos}")
    return params


def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def params_digest(params: dict[str, Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()
