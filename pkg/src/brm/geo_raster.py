"""Building footprints to binary occupancy grid.

Grid convention: cells are addressed ``(row, col)``; column index grows with
world x, row index grows with world y. Cell ``(0, 0)`` is centred on
``(origin_x, origin_y)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from brm import pgm
from brm.errors import (
    ConfigError,
    GeographicCoordinatesError,
    MapFormatError,
    OutOfBoundsError,
    ParseError,
)

MAX_CELLS = 10**8

Point = tuple[float, float]
Ring = tuple[Point, ...]


@dataclass(frozen=True)
class GeoTransform:
    origin_x: float
    origin_y: float
    resolution: float

    def __post_init__(self):
        for name in ("origin_x", "origin_y", "resolution"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (math.isfinite(self.resolution) and self.resolution > 0):
            raise ConfigError(f"resolution must be positive and finite, got {self.resolution}")
        if not (math.isfinite(self.origin_x) and math.isfinite(self.origin_y)):
            raise ConfigError("origin must be finite")

    def col_centers(self, width: int) -> np.ndarray:
        return self.origin_x + np.arange(width) * self.resolution

    def row_centers(self, height: int) -> np.ndarray:
        return self.origin_y + np.arange(height) * self.resolution


@dataclass(frozen=True)
class BuildingPolygon:
    exterior: Ring
    holes: tuple[Ring, ...] = ()

    def __post_init__(self):
        for ring in (self.exterior, *self.holes):
            if len(ring) < 3:
                raise ParseError("polygon ring needs at least 3 vertices")
            for x, y in ring:
                if not (math.isfinite(x) and math.isfinite(y)):
                    raise ParseError("non-finite polygon vertex")

    @property
    def rings(self) -> tuple[Ring, ...]:
        return (self.exterior, *self.holes)

    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p[0] for r in self.rings for p in r]
        ys = [p[1] for r in self.rings for p in r]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class BuildingRaster:
    transform: GeoTransform
    cells: np.ndarray = field(repr=False)  # bool, shape (height, width)

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=bool)
        if cells.ndim != 2 or cells.shape[0] == 0 or cells.shape[1] == 0:
            raise ConfigError(f"raster must be a non-empty 2-D grid, got shape {cells.shape}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def resolution(self) -> float:
        return self.transform.resolution

    def building_fraction(self) -> float:
        return float(self.cells.mean())

    def __eq__(self, other):
        if not isinstance(other, BuildingRaster):
            return NotImplemented
        return self.transform == other.transform and np.array_equal(self.cells, other.cells)


def world_to_grid(transform: GeoTransform, point: Point, shape: tuple[int, int] | None = None) -> tuple[int, int]:
    """Nearest cell ``(row, col)`` to a world point.

    Raises :class:`OutOfBoundsError` for negative indices, or indices past
    ``shape = (height, width)`` when given.
    """
    col = math.floor((point[0] - transform.origin_x) / transform.resolution + 0.5)
    row = math.floor((point[1] - transform.origin_y) / transform.resolution + 0.5)
    if row < 0 or col < 0 or (shape is not None and (row >= shape[0] or col >= shape[1])):
        raise OutOfBoundsError(f"point {point} maps to cell {(row, col)} outside the grid")
    return row, col


def grid_to_world(transform: GeoTransform, cell: tuple[int, int]) -> Point:
    row, col = cell
    return (transform.origin_x + col * transform.resolution,
            transform.origin_y + row * transform.resolution)


# --------------------------------------------------------------------------- GeoJSON

def _ring(coords, offset_hint: int) -> Ring:
    try:
        pts = [(float(c[0]), float(c[1])) for c in coords]
    except (TypeError, ValueError, IndexError):
        raise ParseError("ring coordinates must be [x, y] pairs", offset_hint) from None
    if len(pts) >= 2 and pts[0] == pts[-1]:
        pts = pts[:-1]
    return tuple(pts)


def _is_geographic_crs(doc: dict) -> bool | None:
    crs = doc.get("crs")
    if not isinstance(crs, dict):
        return None
    name = str(crs.get("properties", {}).get("name", "")).upper()
    if not name:
        return None
    return "4326" in name or "CRS84" in name


def parse_polygons(document: bytes | str, *, assume_projected: bool = False) -> list[BuildingPolygon]:
    """Read a GeoJSON FeatureCollection of Polygon/MultiPolygon features.

    Coordinates must be projected metres. If every vertex satisfies
    ``|x| <= 180 and |y| <= 90`` the document is taken to be in degrees and
    rejected, unless it carries a ``crs`` member naming a projected system or
    ``assume_projected`` is set.
    """
    raw = document if isinstance(document, bytes) else document.encode("utf-8")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("document is not valid UTF-8", exc.start) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", len(text[: exc.pos].encode("utf-8"))) from None

    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("top level must be a GeoJSON FeatureCollection", 0)
    features = doc.get("features")
    if not isinstance(features, list):
        raise ParseError("FeatureCollection.features must be a list", 0)

    polys: list[BuildingPolygon] = []
    for idx, feat in enumerate(features):
        where = f"feature {idx}"
        geom = feat.get("geometry") if isinstance(feat, dict) else None
        if not isinstance(geom, dict):
            raise ParseError(f"{where}: missing geometry", 0)
        gtype, coords = geom.get("type"), geom.get("coordinates")
        if gtype == "Polygon":
            ring_sets = [coords]
        elif gtype == "MultiPolygon":
            ring_sets = coords
        else:
            raise ParseError(f"{where}: unsupported geometry type {gtype!r}", 0)
        if not isinstance(ring_sets, list):
            raise ParseError(f"{where}: coordinates must be a list", 0)
        for rings in ring_sets:
            if not isinstance(rings, list) or not rings:
                raise ParseError(f"{where}: polygon without rings", 0)
            parsed = [_ring(r, 0) for r in rings]
            polys.append(BuildingPolygon(parsed[0], tuple(parsed[1:])))

    declared = _is_geographic_crs(doc)
    if declared:
        raise GeographicCoordinatesError("document declares a geographic CRS; reproject to metres first")
    if polys and declared is None and not assume_projected:
        if all(abs(x) <= 180 and abs(y) <= 90 for p in polys for r in p.rings for x, y in r):
            raise GeographicCoordinatesError(
                "all coordinates lie within |x|<=180, |y|<=90: looks like longitude/latitude degrees. "
                "Reproject to a metric CRS, declare it in a 'crs' member, or pass assume_projected")
    return polys


def polygons_to_geojson(polys: Sequence[BuildingPolygon], crs_name: str = "local-metric") -> dict:
    feats = []
    for p in polys:
        rings = [[list(v) for v in (*r, r[0])] for r in p.rings]
        feats.append({"type": "Feature", "properties": {},
                      "geometry": {"type": "Polygon", "coordinates": rings}})
    return {"type": "FeatureCollection",
            "crs": {"type": "name", "properties": {"name": crs_name}},
            "features": feats}


# --------------------------------------------------------------------------- rasterization

def _polygon_parity(poly: BuildingPolygon, transform: GeoTransform, width: int, height: int,
                    xs: np.ndarray, ys: np.ndarray):
    """Even-odd coverage of one polygon inside its bounding window.

    A cell centre ``(xc, yc)`` is inside iff an odd number of edges satisfy
    ``min(yi, yj) <= yc < max(yi, yj)`` and ``xc < x_cross``.
    """
    x0, y0, x1, y1 = poly.bounds()
    r_lo = max(int(np.searchsorted(ys, y0, side="left")), 0)
    r_hi = min(int(np.searchsorted(ys, y1, side="left")), height)
    c_lo = max(int(np.searchsorted(xs, x0, side="left")), 0)
    c_hi = min(int(np.searchsorted(xs, x1, side="left")), width)
    if r_lo >= r_hi or c_lo >= c_hi:
        return None
    row_y = ys[r_lo:r_hi]
    win_x = xs[c_lo:c_hi]
    ncols = c_hi - c_lo
    counts = np.zeros((r_hi - r_lo, ncols + 1), dtype=np.int32)

    for ring in poly.rings:
        pts = np.asarray(ring, dtype=float)
        xi, yi = pts[:, 0], pts[:, 1]
        xj, yj = np.roll(xi, -1), np.roll(yi, -1)
        for ax, ay, bx, by in zip(xi, yi, xj, yj):
            if ay == by:
                continue
            ylo, yhi = (ay, by) if ay < by else (by, ay)
            a = int(np.searchsorted(row_y, ylo, side="left"))
            b = int(np.searchsorted(row_y, yhi, side="left"))
            if a >= b:
                continue
            yc = row_y[a:b]
            xcross = (bx - ax) * (yc - ay) / (by - ay) + ax
            # number of window centres strictly left of the crossing
            k = np.searchsorted(win_x, xcross, side="left")
            np.add.at(counts, (np.arange(a, b), k), 1)

    # parity at column c = crossings with k > c
    right = np.cumsum(counts[:, ::-1], axis=1)[:, ::-1]
    inside = (right[:, 1:] & 1).astype(bool)
    return (slice(r_lo, r_hi), slice(c_lo, c_hi)), inside


def rasterize(polys: Sequence[BuildingPolygon], transform: GeoTransform, width: int, height: int,
              max_cells: int = MAX_CELLS) -> BuildingRaster:
    """Cell is building iff its centre lies inside some polygon (even-odd, holes subtract)."""
    if width <= 0 or height <= 0:
        raise ConfigError("raster width and height must be positive")
    if width * height > max_cells:
        raise ConfigError(f"raster of {width}x{height} cells exceeds the limit of {max_cells}")
    cells = np.zeros((height, width), dtype=bool)
    xs = transform.col_centers(width)
    ys = transform.row_centers(height)
    for poly in polys:
        hit = _polygon_parity(poly, transform, width, height, xs, ys)
        if hit is not None:
            window, inside = hit
            cells[window] |= inside
    return BuildingRaster(transform, cells)


def fit_transform(polys: Sequence[BuildingPolygon], resolution: float, margin: float = 0.0):
    """Grid geometry covering all polygons plus ``margin`` metres on every side."""
    if not polys:
        raise ConfigError("cannot infer raster extent from zero polygons")
    b = np.array([p.bounds() for p in polys])
    x0, y0 = b[:, 0].min() - margin, b[:, 1].min() - margin
    x1, y1 = b[:, 2].max() + margin, b[:, 3].max() + margin
    transform = GeoTransform(x0 + resolution / 2, y0 + resolution / 2, resolution)
    width = max(int(math.ceil((x1 - x0) / resolution)), 1)
    height = max(int(math.ceil((y1 - y0) / resolution)), 1)
    return transform, width, height


# --------------------------------------------------------------------------- raster files

def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".geo")


def save_raster(raster: BuildingRaster, path: str | Path) -> None:
    """PGM (building = 0 black, other = 255 white) plus a ``.geo`` sidecar."""
    img = np.where(raster.cells, 0, 255).astype(np.uint8)
    pgm.write_pgm(path, img)
    t = raster.transform
    sidecar_path(path).write_text(
        f"origin_x = {t.origin_x!r}\norigin_y = {t.origin_y!r}\nresolution = {t.resolution!r}\n")


def load_raster(path: str | Path) -> BuildingRaster:
    img = pgm.read_pgm(path)
    side = sidecar_path(path)
    if not side.exists():
        raise MapFormatError(f"missing geotransform sidecar {side}")
    keys = {}
    for line in side.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        keys[key.strip()] = value.strip()
    try:
        t = GeoTransform(float(keys["origin_x"]), float(keys["origin_y"]), float(keys["resolution"]))
    except (KeyError, ValueError) as exc:
        raise MapFormatError(f"bad sidecar {side}: {exc}") from None
    return BuildingRaster(t, img < 128)
