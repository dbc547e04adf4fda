"""Minimal binary PGM (P5, 8-bit) reader and writer."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from brm.errors import MapFormatError


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def _tokens(data: bytes, count: int):
    """Return ``count`` header tokens and the offset right after the last one."""
    out, i = [], 0
    while len(out) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise MapFormatError("truncated PGM header")
        out.append(data[start:i])
    return out, i + 1  # exactly one whitespace byte separates header from raster


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _tokens(data, 4)
    if magic != b"P5":
        raise MapFormatError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise MapFormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise MapFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    body = data[offset : offset + w * h]
    if len(body) != w * h:
        raise MapFormatError(f"{path}: truncated PGM body")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()
