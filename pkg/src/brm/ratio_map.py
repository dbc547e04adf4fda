"""Precomputed building-ratio layers over a strided lattice of map cells.

Layer ``k`` holds, for each lattice cell, the fraction of building cells in
the disk of ``radius_px(k)`` cells around it. Disks are cumulative (layer 1 is
the widest) and share :func:`brm.disk.inside_disk` with frame features.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from brm.disk import chord_half_widths, disk_mask, round_half_up
from brm.errors import ConfigError, MapFormatError
from brm.geo_raster import BuildingRaster, GeoTransform

MAGIC = b"BRM1"
_HEADER = struct.Struct("<4s4I5d")


@dataclass(frozen=True)
class CameraConfig:
    fov_alpha: float = 43.0  # full field of view, degrees
    altitude_zl: float = 150.0  # metres
    frame_w: int = 640
    frame_h: int = 480

    def __post_init__(self):
        if not 0 < self.fov_alpha < 180:
            raise ConfigError(f"fov_alpha must be in (0, 180) degrees, got {self.fov_alpha}")
        if not self.altitude_zl > 0:
            raise ConfigError(f"altitude_zl must be positive, got {self.altitude_zl}")
        if not self.frame_w >= self.frame_h > 0:
            raise ConfigError(f"need frame_w >= frame_h > 0, got {self.frame_w}x{self.frame_h}")

    @property
    def ground_half_width(self) -> float:
        """Half the ground side covered by the square frame."""
        return self.altitude_zl * math.tan(math.radians(self.fov_alpha) / 2)


def ground_radius(k: int, n: int, camera: CameraConfig) -> float:
    """Ground radius in metres of the k-th (1-based) disk out of ``n``."""
    if not 1 <= k <= n:
        raise ConfigError(f"layer index k={k} outside 1..{n}")
    return (n + 1 - k) / n * camera.ground_half_width


def radius_cells(radius_m: float, resolution: float) -> int:
    return round_half_up(radius_m / resolution)


@dataclass(frozen=True, eq=False)
class RatioLayer:
    k: int
    ground_radius: float
    radius_px: int
    stride: int
    values: np.ndarray = field(repr=False)  # float32 lattice grid, NaN = invalid

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.values)


@dataclass(frozen=True, eq=False)
class RatioMapSet:
    layers: tuple[RatioLayer, ...]
    transform: GeoTransform
    stride: int
    altitude_zl: float
    fov_alpha: float

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("a ratio map needs at least one layer")
        shape = self.layers[0].values.shape
        for i, layer in enumerate(self.layers, start=1):
            if layer.k != i or layer.stride != self.stride or layer.values.shape != shape:
                raise ConfigError("layers must be numbered 1..n and share stride and extent")
        object.__setattr__(self, "_stack", np.stack([lay.values for lay in self.layers]).astype(np.float64))
        object.__setattr__(self, "_valid", ~np.isnan(self._stack).any(axis=0))

    @property
    def n(self) -> int:
        return len(self.layers)

    @property
    def shape(self) -> tuple[int, int]:
        """Lattice shape ``(rows, cols)``."""
        return self.layers[0].values.shape

    @property
    def stack(self) -> np.ndarray:
        """All layers as float64, shape ``(n, rows, cols)``."""
        return self._stack

    @property
    def valid(self) -> np.ndarray:
        """Lattice cells valid in every layer."""
        return self._valid

    @property
    def lattice_spacing(self) -> float:
        return self.stride * self.transform.resolution

    def lattice_x(self) -> np.ndarray:
        return self.transform.origin_x + np.arange(self.shape[1]) * self.lattice_spacing

    def lattice_y(self) -> np.ndarray:
        return self.transform.origin_y + np.arange(self.shape[0]) * self.lattice_spacing

    def position(self, lattice_cell: tuple[int, int]) -> tuple[float, float]:
        r, c = lattice_cell
        return (self.transform.origin_x + c * self.lattice_spacing,
                self.transform.origin_y + r * self.lattice_spacing)

    def nearest_cell(self, point: tuple[float, float]) -> tuple[int, int]:
        s = self.lattice_spacing
        c = math.floor((point[0] - self.transform.origin_x) / s + 0.5)
        r = math.floor((point[1] - self.transform.origin_y) / s + 0.5)
        return r, c

    def radii_px(self) -> list[int]:
        return [lay.radius_px for lay in self.layers]

    def __eq__(self, other):
        if not isinstance(other, RatioMapSet):
            return NotImplemented
        if (self.transform, self.stride, self.altitude_zl, self.fov_alpha, self.n) != (
                other.transform, other.stride, other.altitude_zl, other.fov_alpha, other.n):
            return False
        for a, b in zip(self.layers, other.layers):
            if (a.k, a.ground_radius, a.radius_px) != (b.k, b.ground_radius, b.radius_px):
                return False
            if a.values.tobytes() != b.values.tobytes():
                return False
        return True

    @classmethod
    def from_arrays(cls, values: Sequence[np.ndarray], transform: GeoTransform, stride: int = 1,
                    altitude_zl: float = 150.0, fov_alpha: float = 43.0) -> "RatioMapSet":
        """Wrap hand-made lattice grids (NaN = invalid) as a map set."""
        n = len(values)
        layers = []
        for k, v in enumerate(values, start=1):
            r = (n + 1 - k) / n * altitude_zl * math.tan(math.radians(fov_alpha) / 2)
            layers.append(RatioLayer(k, r, radius_cells(r, transform.resolution), stride,
                                     np.asarray(v, dtype=np.float32)))
        return cls(tuple(layers), transform, stride, altitude_zl, fov_alpha)


class DiskCount(NamedTuple):
    building: int
    total: int
    clipped: bool  # part of the disk fell outside the raster


@lru_cache(maxsize=64)
def _disk_offsets(radius: int) -> tuple[np.ndarray, np.ndarray]:
    dy, dx = np.nonzero(disk_mask(radius))
    return dy - radius, dx - radius


def disk_sum_bruteforce(raster: BuildingRaster, center: tuple[int, int], radius_px: int) -> DiskCount:
    """Count cells of the disk around ``center = (row, col)`` one offset at a time."""
    dy, dx = _disk_offsets(int(radius_px))
    rows = center[0] + dy
    cols = center[1] + dx
    inside = (rows >= 0) & (rows < raster.height) & (cols >= 0) & (cols < raster.width)
    building = int(raster.cells[rows[inside], cols[inside]].sum())
    return DiskCount(building, int(inside.sum()), not bool(inside.all()))


def ratio_layer(cells: np.ndarray, radius_px: int, stride: int) -> np.ndarray:
    """Disk ratios on the ``stride`` lattice via per-row chords over row prefix sums.

    Returns float32 with NaN where the disk leaves the grid.
    """
    if radius_px < 1:
        raise ConfigError(f"disk radius must be at least one cell, got {radius_px}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    height, width = cells.shape
    R = int(radius_px)
    lat_r = np.arange(0, height, stride)
    lat_c = np.arange(0, width, stride)
    out = np.full((lat_r.size, lat_c.size), np.nan, dtype=np.float32)

    row_ok = (lat_r >= R) & (lat_r + R < height)
    col_ok = (lat_c >= R) & (lat_c + R < width)
    if not row_ok.any() or not col_ok.any():
        return out
    vr, vc = lat_r[row_ok], lat_c[col_ok]

    prefix = np.zeros((height, width + 1), dtype=np.int32)
    np.cumsum(cells, axis=1, dtype=np.int32, out=prefix[:, 1:])

    widths = chord_half_widths(R)
    total = int((2 * widths + 1).sum())
    acc = np.zeros((vr.size, vc.size), dtype=np.int64)
    for dy, w in zip(range(-R, R + 1), widths):
        rows = prefix[vr + dy]
        acc += rows[:, vc + w + 1] - rows[:, vc - w]
    out[np.ix_(row_ok, col_ok)] = (acc / total).astype(np.float32)
    return out


def generate(raster: BuildingRaster, camera: CameraConfig, n: int = 3, stride: int = 1) -> RatioMapSet:
    if n < 1:
        raise ConfigError(f"feature count n must be >= 1, got {n}")
    layers = []
    for k in range(1, n + 1):
        r_m = ground_radius(k, n, camera)
        r_px = radius_cells(r_m, raster.resolution)
        if r_px < 1:
            raise ConfigError(f"layer {k}: ground radius {r_m:.3f} m rounds to {r_px} cells "
                              f"at {raster.resolution} m/cell; need at least 1")
        layers.append(RatioLayer(k, r_m, r_px, stride, ratio_layer(raster.cells, r_px, stride)))
    return RatioMapSet(tuple(layers), raster.transform, stride, camera.altitude_zl, camera.fov_alpha)


# --------------------------------------------------------------------------- persistence

def save(mapset: RatioMapSet, path: str | Path) -> None:
    rows, cols = mapset.shape
    t = mapset.transform
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, mapset.n, cols, rows, mapset.stride, t.resolution,
                              t.origin_x, t.origin_y, mapset.altitude_zl, mapset.fov_alpha))
        for layer in mapset.layers:
            fh.write(struct.pack("<d", layer.ground_radius))
            fh.write(np.ascontiguousarray(layer.values, dtype="<f4").tobytes())


def load(path: str | Path) -> RatioMapSet:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise MapFormatError(f"{path}: file too short for a ratio-map header")
    magic, n, cols, rows, stride, res, ox, oy, zl, alpha = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MapFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if n < 1 or stride < 1:
        raise MapFormatError(f"{path}: invalid header (n={n}, stride={stride})")
    layer_bytes = 8 + 4 * rows * cols
    if len(data) != _HEADER.size + n * layer_bytes:
        raise MapFormatError(f"{path}: expected {_HEADER.size + n * layer_bytes} bytes, found {len(data)}")
    try:
        transform = GeoTransform(ox, oy, res)
    except ConfigError as exc:
        raise MapFormatError(f"{path}: {exc}") from None
    layers = []
    offset = _HEADER.size
    for k in range(1, n + 1):
        (r_m,) = struct.unpack_from("<d", data, offset)
        values = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=offset + 8)
        values = values.reshape(rows, cols).astype(np.float32)
        layers.append(RatioLayer(k, r_m, radius_cells(r_m, res), stride, values))
        offset += layer_bytes
    return RatioMapSet(tuple(layers), transform, stride, zl, alpha)
