"""Slow, obviously-correct reference implementations used only by the tests.

Nothing here imports the code under test except plain data containers, so a
bug in a fast path cannot be mirrored by its oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


# --------------------------------------------------------------------------- polygons

def pnpoly(rings, x: float, y: float) -> bool:
    """Even-odd crossing test of one point against every ring of a polygon."""
    inside = False
    for ring in rings:
        n = len(ring)
        j = n - 1
        for i in range(n):
            xi, yi = ring[i]
            xj, yj = ring[j]
            if (yi > y) != (yj > y):
                x_cross = (xj - xi) * (y - yi) / (yj - yi) + xi
                if x < x_cross:
                    inside = not inside
            j = i
    return inside


def rasterize_oracle(polys, origin_x, origin_y, resolution, width, height) -> np.ndarray:
    out = np.zeros((height, width), dtype=bool)
    for r in range(height):
        for c in range(width):
            x, y = origin_x + c * resolution, origin_y + r * resolution
            out[r, c] = any(pnpoly(p.rings, x, y) for p in polys)
    return out


# --------------------------------------------------------------------------- disks

def disk_offsets(radius: float) -> list[tuple[int, int]]:
    """Integer (dy, dx) offsets with dx*dx + dy*dy <= radius*radius, by enumeration."""
    reach = int(math.floor(radius))
    return [(dy, dx) for dy in range(-reach, reach + 1) for dx in range(-reach, reach + 1)
            if dx * dx + dy * dy <= radius * radius]


def disk_ratio_grid(cells: np.ndarray, radius: int) -> np.ndarray:
    """float32 ratio of every cell, NaN where the disk leaves the grid.

    Sums one shifted copy of the grid per disk offset, so the work is
    independent of any chord or prefix-sum decomposition.
    """
    h, w = cells.shape
    offs = disk_offsets(radius)
    count = np.zeros((h, w), dtype=np.int64)
    pad = np.zeros((h + 2 * radius, w + 2 * radius), dtype=np.int64)
    pad[radius:radius + h, radius:radius + w] = cells
    for dy, dx in offs:
        count += pad[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
    out = np.full((h, w), np.nan, dtype=np.float32)
    for r in range(radius, h - radius):
        for c in range(radius, w - radius):
            out[r, c] = np.float32(int(count[r, c]) / len(offs))
    return out


def frame_ratios(bits: np.ndarray, radii) -> list[float]:
    """Pixel-loop building ratio inside each disk centred on the frame centre."""
    h = bits.shape[0]
    centre = (h - 1) / 2
    out = []
    for r in radii:
        b = t = 0
        for i in range(h):
            for j in range(h):
                dy, dx = i - centre, j - centre
                if dx * dx + dy * dy <= r * r:
                    t += 1
                    b += int(bits[i, j])
        out.append(float(np.float32(b / t)))
    return out


# --------------------------------------------------------------------------- matcher replay

@dataclass
class OracleCandidate:
    cell: int  # flat row-major lattice index
    parent: int  # index into the previous generation, -1 when parentless
    residual: float
    x: float
    y: float
    parent_xy: tuple[float, float] | None


class FullScanMatcher:
    """Reference matcher that visits every lattice cell for every candidate
    at each step.

    ``layers`` are the float32 lattice grids (NaN = invalid). Lattice cell
    ``(r, c)`` sits at ``(origin_x + c * spacing, origin_y + r * spacing)``.
    """

    def __init__(self, layers, origin_x, origin_y, spacing, e1, epsilon, d_max, k_cap):
        self.layers = [np.asarray(v, dtype=np.float32) for v in layers]
        self.rows, self.cols = self.layers[0].shape
        self.ox, self.oy, self.s = origin_x, origin_y, spacing
        self.e1, self.eps, self.d_max, self.k_cap = e1, epsilon, d_max, k_cap
        self.state: list[OracleCandidate] = []
        self.estimate = None
        self.phase = "searching"

    def pos(self, cell: int) -> tuple[float, float]:
        r, c = divmod(cell, self.cols)
        return self.ox + c * self.s, self.oy + r * self.s

    def residual(self, cell: int, f) -> float:
        r, c = divmod(cell, self.cols)
        total = 0.0
        for k, layer in enumerate(self.layers):
            v = float(layer[r, c])
            if v != v:
                return math.inf
            total += abs(v - float(f[k]))
        return total

    def _finish(self, rows):
        rows.sort(key=lambda t: (t[0], t[1], t[2]))
        return rows[: self.k_cap]

    def step(self, f, d: float) -> list[OracleCandidate]:
        ncell = self.rows * self.cols
        prev = self.state
        if not prev:
            rows = [(self.residual(c, f), c, -1) for c in range(ncell)]
            rows = self._finish([t for t in rows if t[0] < self.e1])
            new = [OracleCandidate(c, -1, res, *self.pos(c), None) for res, c, _ in rows]
        else:
            best: dict[tuple[int, int], int] = {}
            for j, p in enumerate(prev):
                theta = None
                if p.parent_xy is not None and p.parent_xy != (p.x, p.y):
                    theta = math.atan2(p.y - p.parent_xy[1], p.x - p.parent_xy[0])
                    cx, cy = p.x + d * math.cos(theta), p.y + d * math.sin(theta)
                for cell in range(ncell):
                    x, y = self.pos(cell)
                    if theta is not None:
                        ok = abs(x - cx) < self.eps and abs(y - cy) < self.eps
                    else:
                        ok = abs(math.sqrt((x - p.x) ** 2 + (y - p.y) ** 2) - d) <= self.eps
                    if ok and self.residual(cell, f) != math.inf:
                        key = (cell, p.cell)
                        if key not in best or j < best[key]:
                            best[key] = j
            rows = [(self.residual(cell, f), cell, j) for (cell, _), j in best.items()]
            rows = self._finish([t for t in rows if t[0] < self.e1])
            new = [OracleCandidate(c, j, res, *self.pos(c), (prev[j].x, prev[j].y)) for res, c, j in rows]
        self.state = new
        if not new:
            self.phase = "searching"
            return new
        cx = sum(c.x for c in new) / len(new)
        cy = sum(c.y for c in new) / len(new)
        spread = max(math.hypot(c.x - cx, c.y - cy) for c in new)
        if spread < self.d_max:
            self.phase, self.estimate = "converged", (cx, cy)
        else:
            self.phase = "tracking"
        return new

    def reset(self) -> None:
        self.state = []
