"""Seeded synthetic city used by the acceptance runs and the demo scripts.

An irregular street grid splits the square world into blocks of 40 to 100 m.
Each block is built with a probability that varies smoothly across the city,
so dense quarters sit next to sparse outskirts; a built block holds one large
footprint that fills most of the block interior. The layout has no large
featureless regions, which keeps ratio features informative everywhere.
"""

from __future__ import annotations

import math

import numpy as np

from brm.geo_raster import BuildingPolygon, BuildingRaster, GeoTransform, rasterize

STREET = 4.0  # metres kept free around each block


def _rect(cx, cy, w, h, ang):
    c, s = math.cos(ang), math.sin(ang)
    pts = []
    for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
        dx, dy = sx * w / 2, sy * h / 2
        pts.append((cx + c * dx - s * dy, cy + s * dx + c * dy))
    return BuildingPolygon(tuple(pts))


def _cuts(rng: np.random.Generator, size: float, lo: float, hi: float) -> list[float]:
    xs = [0.0]
    while xs[-1] < size:
        xs.append(min(size, xs[-1] + float(rng.uniform(lo, hi))))
    return xs


def occupancy(x: float, y: float, seed: int, mean: float = 0.42, swing: float = 0.33) -> float:
    """Smooth probability that the block centred at ``(x, y)`` is built."""
    ph = (seed % 997) * 0.61
    q = mean + swing * math.sin(x / 310.0 + ph) * math.cos(y / 370.0 - 0.5 * ph)
    return min(max(q, 0.02), 0.95)


def synthetic_city(seed: int = 2024, size: float = 2000.0, block: tuple[float, float] = (40.0, 100.0),
                   fill: tuple[float, float] = (0.85, 1.0)) -> list[BuildingPolygon]:
    """Building footprints over ``[0, size] x [0, size]`` metres."""
    rng = np.random.default_rng(seed)
    xs = _cuts(rng, size, *block)
    ys = _cuts(rng, size, *block)
    polys = []
    for x0, x1 in zip(xs, xs[1:]):
        for y0, y1 in zip(ys, ys[1:]):
            u = float(rng.random())
            a = math.sqrt(float(rng.uniform(*fill)))
            jx, jy = float(rng.random()), float(rng.random())
            if u > occupancy((x0 + x1) / 2, (y0 + y1) / 2, seed):
                continue
            w, h = x1 - x0 - STREET, y1 - y0 - STREET
            if w < 4 or h < 4:
                continue
            bw, bh = w * a, h * a
            cx = x0 + STREET / 2 + bw / 2 + jx * (w - bw)
            cy = y0 + STREET / 2 + bh / 2 + jy * (h - bh)
            polys.append(_rect(cx, cy, bw, bh, 0.0))
    return polys


def synthetic_raster(seed: int = 2024, size: float = 2000.0, resolution: float = 1.0) -> BuildingRaster:
    """Rasterised :func:`synthetic_city` with cell (0, 0) centred at half a cell."""
    n = int(round(size / resolution))
    t = GeoTransform(resolution / 2, resolution / 2, resolution)
    return rasterize(synthetic_city(seed, size), t, n, n)
