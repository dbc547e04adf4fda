"""Rotation-invariant concentric building-ratio features of a square frame."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from brm import pgm
from brm.disk import inside_disk
from brm.errors import ConfigError


@dataclass(frozen=True, eq=False)
class FrameMask:
    bits: np.ndarray = field(repr=False)  # bool (h, h), True = building
    index: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1] or bits.shape[0] == 0:
            raise ConfigError(f"frame mask must be square and non-empty, got shape {bits.shape}")
        object.__setattr__(self, "bits", bits)

    @property
    def side(self) -> int:
        return self.bits.shape[0]


def square_crop(mask: np.ndarray, index: int = 0, timestamp: float = 0.0) -> FrameMask:
    """Keep the central ``h x h`` block of an ``h x w`` mask (``w >= h``).

    When ``w - h`` is odd the surplus column comes off the right side.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    if w < h:
        raise ConfigError(f"frame must be at least as wide as tall, got {w}x{h}")
    left = (w - h) // 2
    return FrameMask(mask[:, left : left + h], index, timestamp)


def pixel_radius(k: int, n: int, h: int) -> float:
    if not 1 <= k <= n:
        raise ConfigError(f"layer index k={k} outside 1..{n}")
    return h / 2 * (n + 1 - k) / n


@lru_cache(maxsize=64)
def _disk_member(h: int, radius: float) -> np.ndarray:
    offs = np.arange(h) - (h - 1) / 2
    return inside_disk(offs[:, None], offs[None, :], radius)


def extract(frame: FrameMask, n: int, radii: Sequence[float] | None = None) -> np.ndarray:
    """Building ratio inside each of ``n`` concentric disks.

    Ratios are rounded to float32, the precision the ratio map stores. Disks are centred on the frame centre ``((h-1)/2, (h-1)/2)``. ``radii`` (in
    pixels, widest first) defaults to ``h/2 * (n+1-k)/n``; pass the map's
    integer cell radii when the frame is sampled at map resolution.
    """
    h = frame.side
    if radii is None:
        radii = [pixel_radius(k, n, h) for k in range(1, n + 1)]
    if len(radii) != n:
        raise ConfigError(f"expected {n} radii, got {len(radii)}")
    if radii[-1] < 1:
        raise ConfigError(f"innermost radius {radii[-1]} is below one pixel")
    out = np.empty(n, dtype=np.float64)
    for i, r in enumerate(radii):
        member = _disk_member(h, float(r))
        out[i] = np.float32(int(frame.bits[member].sum()) / int(member.sum()))
    return out


def read_frame(path: str | Path, index: int = 0, timestamp: float = 0.0) -> FrameMask:
    """Load a PGM frame (dark = building) and square-crop it."""
    return square_crop(pgm.read_pgm(path) < 128, index, timestamp)


def write_frame(path: str | Path, frame: FrameMask) -> None:
    pgm.write_pgm(path, np.where(frame.bits, 0, 255).astype(np.uint8))


def write_features_csv(path: str | Path, rows: Iterable[tuple[int, Sequence[float]]]) -> None:
    rows = list(rows)
    n = len(rows[0][1]) if rows else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index"] + [f"f_{k}" for k in range(1, n + 1)])
        for idx, f in rows:
            w.writerow([idx] + [repr(float(v)) for v in f])
