"""Binary PPM (P6, maxval 255) reading and writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import FormatError


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError(f"PPM needs an (H, W, 3) uint8 image, got {image.shape} {image.dtype}")
    h, w, _ = image.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(image).tobytes()


def _tokens(buf: bytes, count: int):
    """Read `count` whitespace-separated header tokens, skipping # comments."""
    out, pos = [], 0
    while len(out) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        out.append(buf[start:pos])
    return out, pos + 1


def decode_ppm(buf: bytes) -> np.ndarray:
    (magic, w, h, maxval), pos = _tokens(buf, 4)
    if magic != b"P6":
        raise FormatError(f"not a binary PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}")
    need = w * h * 3
    if len(buf) - pos < need:
        raise FormatError(f"PPM pixel data truncated: {len(buf) - pos} of {need} bytes")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos).reshape(h, w, 3).copy()


def write_ppm(path, image: np.ndarray):
    Path(path).write_bytes(encode_ppm(image))


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())
