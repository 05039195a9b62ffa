"""Binary weight file ("TNNW", version 1).

Layout, all integers little-endian:
    magic b"TNNW" | version u8 | model kind u8 | tensor count u16
    per tensor: name length u8 | UTF-8 name | rank u8 | dims u32 * rank | float32 data
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"TNNW"
VERSION = 1
HEADER = struct.Struct("<4sBBH")


def encode_weights(kind: int, tensors: list[tuple[str, np.ndarray]]) -> bytes:
    parts = [HEADER.pack(MAGIC, VERSION, kind, len(tensors))]
    for name, arr in tensors:
        raw = name.encode("utf-8")
        if len(raw) > 255:
            raise ValueError(f"tensor name too long: {name!r}")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<B", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def expected_size(tensors: list[tuple[str, np.ndarray]]) -> int:
    size = HEADER.size
    for name, arr in tensors:
        size += 1 + len(name.encode("utf-8")) + 1 + 4 * arr.ndim + 4 * arr.size
    return size


def decode_weights(buf: bytes) -> tuple[int, list[tuple[str, np.ndarray]]]:
    def need(offset, n, what):
        if offset + n > len(buf):
            raise FormatError(f"truncated weight file: {what} at offset {offset} needs {n} bytes")

    need(0, HEADER.size, "header")
    magic, version, kind, count = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    off = HEADER.size
    tensors = []
    for _ in range(count):
        need(off, 1, "name length")
        (nlen,) = struct.unpack_from("<B", buf, off)
        off += 1
        need(off, nlen, "name")
        try:
            name = buf[off : off + nlen].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid tensor name at offset {off}") from exc
        off += nlen
        need(off, 1, "rank")
        (rank,) = struct.unpack_from("<B", buf, off)
        off += 1
        need(off, 4 * rank, "dims")
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        nbytes = 4 * int(np.prod(dims, dtype=np.int64))
        need(off, nbytes, f"data of {name!r}")
        arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=off).reshape(dims)
        tensors.append((name, arr.astype(np.float32)))
        off += nbytes
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes at offset {off}")
    return kind, tensors


def save_weights(path, kind: int, tensors: list[tuple[str, np.ndarray]]):
    Path(path).write_bytes(encode_weights(kind, tensors))


def load_weights(path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    return decode_weights(Path(path).read_bytes())
