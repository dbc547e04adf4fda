"""The one disk-membership predicate shared by map generation and frame features.

A lattice offset ``(dx, dy)`` belongs to the disk of radius ``r`` iff
``dx*dx + dy*dy <= r*r``. Offsets may be half-integers (even-sided frames are
centred between pixels); radii may be real.
"""

from __future__ import annotations

import numpy as np


def inside_disk(dx, dy, radius):
    return dx * dx + dy * dy <= radius * radius


def round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def chord_half_widths(radius: int) -> np.ndarray:
    """Half-width of every disk row, for integer-centred disks.

    Entry ``j`` is the largest ``dx >= 0`` with ``(dx, j - radius)`` inside the
    disk, so row ``dy`` spans ``[-w, w]``.
    """
    offsets = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(offsets, offsets, indexing="ij")
    member = inside_disk(dx, dy, radius)
    return member.sum(axis=1) // 2


def disk_mask(radius: int) -> np.ndarray:
    """Boolean ``(2r+1, 2r+1)`` stencil centred on the middle element."""
    offsets = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(offsets, offsets, indexing="ij")
    return inside_disk(dx, dy, radius)
