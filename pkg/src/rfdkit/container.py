"""Shared binary container: named float32 arrays in one flat file.

Layout (all integers little-endian):

    magic   4 bytes  b"RFDK"
    version u32      currently 1
    count   u32      number of entries
    entry*  count times:
        name_len u32
        name     name_len bytes, UTF-8
        rank     u32
        dims     rank x u64
        data     prod(dims) x f32, raw little-endian

Checkpoints, occupancy query batches, and voxel-grid exports all use this
framing. Payloads that are not naturally float32 (bit-packed occupancy)
are carried as raw bytes padded to 4-byte lanes and viewed as f32; the
bytes round-trip exactly because nothing ever computes on them.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"RFDK"
VERSION = 1

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def write_container(path: str | Path, entries: dict[str, np.ndarray]) -> None:
    """Write named arrays; every entry is stored as float32."""
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(entries))]
    for name, arr in entries.items():
        data = np.ascontiguousarray(arr, dtype=np.float32)
        raw = name.encode("utf-8")
        chunks.append(_U32.pack(len(raw)))
        chunks.append(raw)
        chunks.append(_U32.pack(data.ndim))
        for d in data.shape:
            chunks.append(_U64.pack(d))
        chunks.append(data.astype("<f4", copy=False).tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes, path: Path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated container (needed {n} bytes at offset {self.pos})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]


def read_container(path: str | Path) -> dict[str, np.ndarray]:
    """Read a container back into {name: float32 array}."""
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic, not a container file")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    count = r.u32()
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u32()
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: entry name is not valid UTF-8") from exc
        if name in entries:
            raise FormatError(f"{path}: duplicate entry name {name!r}")
        rank = r.u32()
        dims = tuple(r.u64() for _ in range(rank))
        n = 1
        for d in dims:
            n *= d
        data = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).copy()
        entries[name] = data
    if r.pos != len(r.buf):
        raise FormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes after last entry")
    return entries


def bytes_to_f32_lanes(raw: bytes) -> np.ndarray:
    """Pack raw bytes into f32 lanes for transport inside a container entry."""
    pad = (-len(raw)) % 4
    buf = raw + b"\x00" * pad
    return np.frombuffer(buf, dtype="<f4").copy()


def f32_lanes_to_bytes(lanes: np.ndarray, nbytes: int) -> bytes:
    raw = np.ascontiguousarray(lanes, dtype="<f4").tobytes()
    if nbytes > len(raw):
        raise FormatError(f"payload claims {nbytes} bytes but lanes hold {len(raw)}")
    return raw[:nbytes]
