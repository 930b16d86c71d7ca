"""Flat binary tensor archive for model snapshots.

Layout, all little-endian:
    magic "SGN1"
    u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 rank, u32 per dim, then
    float32 payload in C order.

Entries are written sorted by name so identical contents give identical
bytes. Values are stored as float32; round-trips of float32 data are
bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpointError

MAGIC = b"SGN1"


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        # asarray, not ascontiguousarray: the latter promotes rank 0 to rank 1.
        arr = np.asarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptCheckpointError(f"{self.path}: truncated at byte {self.pos}")
        piece = self.blob[self.pos:self.pos + n]
        self.pos += n
        return piece


def load_tensors(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic, not a checkpoint")
    (count,) = struct.unpack("<I", r.take(4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2))
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptCheckpointError(f"{path}: undecodable tensor name") from exc
        (rank,) = struct.unpack("<B", r.take(1))
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        size = 1
        for d in shape:
            size *= d
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).copy()
        if name in out:
            raise CorruptCheckpointError(f"{path}: duplicate tensor name {name!r}")
        out[name] = arr
    if r.pos != len(blob):
        raise CorruptCheckpointError(f"{path}: {len(blob) - r.pos} trailing bytes")
    return out
