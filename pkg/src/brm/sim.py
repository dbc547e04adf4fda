"""Deterministic stand-in for the flight stack.

Produces true poses along a waypoint plan together with binary downward
frames sampled from the building raster. Odometry drift and pixel-flip
segmentation noise are layered on top by separate seeded models.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from brm.errors import ConfigError, OutOfMapError
from brm.feature import FrameMask
from brm.geo_raster import BuildingRaster
from brm.matcher import OdometryDelta
from brm.ratio_map import CameraConfig


@dataclass(frozen=True)
class TruePose:
    t: float
    x: float
    y: float
    z: float
    yaw: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.t, self.x, self.y, self.z, self.yaw)):
            raise ConfigError("pose fields must be finite")
        if self.z <= 0:
            raise ConfigError(f"altitude must be positive, got {self.z}")


@dataclass(frozen=True)
class FlightPlan:
    waypoints: tuple[tuple[float, float], ...]
    speed: float = 5.0
    frame_interval: float = 5.0
    altitude: float = 150.0

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple((float(x), float(y)) for x, y in self.waypoints))
        if len(self.waypoints) < 2:
            raise ConfigError("flight plan needs at least two waypoints")
        if self.speed <= 0 or self.frame_interval <= 0 or self.altitude <= 0:
            raise ConfigError("speed, frame_interval and altitude must be positive")

    @classmethod
    def square(cls, corner: tuple[float, float], side: float, offset: float = 0.0, **kw) -> "FlightPlan":
        """Counter-clockwise square lap from ``corner``, entered ``offset`` metres along the first side.

        The lap still covers ``4 * side`` metres and ends where it began.
        """
        if not 0 <= offset < side:
            raise ConfigError(f"square offset must be in [0, side), got {offset}")
        x, y = corner
        pts = [(x + offset, y), (x + side, y), (x + side, y + side), (x, y + side), (x, y)]
        if offset > 0:
            pts.append((x + offset, y))
        return cls(tuple(pts), **kw)

    def to_json(self) -> str:
        d = asdict(self)
        d["waypoints"] = [list(p) for p in self.waypoints]
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FlightPlan":
        d = json.loads(text)
        return cls(tuple(tuple(p) for p in d["waypoints"]), d.get("speed", 5.0),
                   d.get("frame_interval", 5.0), d.get("altitude", 150.0))


@dataclass(frozen=True)
class OdometryNoiseModel:
    """Scale bias and white noise on distance, plus heading drift on the vector.

    ``yaw_drift`` is a constant heading bias rate (rad per metre flown) and
    ``sigma_yaw`` a per-step heading random walk (rad). Both only affect the
    displacement vector used for dead reckoning, not the distance ``d``.
    """

    scale_bias: float = 0.0
    sigma_d: float = 0.0
    yaw_drift: float = 0.0
    sigma_yaw: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_d < 0 or self.sigma_yaw < 0:
            raise ConfigError("noise standard deviations must be >= 0")


@dataclass(frozen=True)
class SegmentationNoiseModel:
    flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.flip_prob <= 1:
            raise ConfigError(f"flip_prob must be in [0, 1], got {self.flip_prob}")


def gen_trajectory(plan: FlightPlan) -> list[TruePose]:
    """Poses every ``frame_interval`` seconds at constant speed along the legs."""
    legs = []
    for (ax, ay), (bx, by) in zip(plan.waypoints, plan.waypoints[1:]):
        length = math.hypot(bx - ax, by - ay)
        if length == 0:
            raise ConfigError(f"zero-length leg at waypoint {(ax, ay)}")
        legs.append((ax, ay, bx, by, length))
    total = sum(leg[4] for leg in legs)
    step = plan.speed * plan.frame_interval
    poses = []
    i = 0
    while True:
        s = i * step
        if s > total * (1 + 1e-12):
            break
        acc, rem = 0.0, s
        for li, (ax, ay, bx, by, length) in enumerate(legs):
            if rem < length or li == len(legs) - 1:
                u = min(rem / length, 1.0)
                x, y = ax + u * (bx - ax), ay + u * (by - ay)
                yaw = math.atan2(by - ay, bx - ax)
                break
            rem -= length
        poses.append(TruePose(i * plan.frame_interval, x, y, plan.altitude, yaw))
        i += 1
    return poses


def frame_pixel_size(camera: CameraConfig, h: int) -> float:
    return 2 * camera.ground_half_width / h


def render_frame(raster: BuildingRaster, pose: TruePose, camera: CameraConfig, h: int,
                 pixel_size: float | None = None, index: int = 0) -> FrameMask:
    """Nearest-neighbour ``h x h`` downward view centred on the pose.

    Frame column axis points along the heading. ``pixel_size`` defaults to the
    camera footprint ``2 z tan(alpha/2) / h`` at the pose altitude.
    """
    if pixel_size is None:
        pixel_size = 2 * pose.z * math.tan(math.radians(camera.fov_alpha) / 2) / h
    offs = (np.arange(h) - (h - 1) / 2) * pixel_size
    v, u = np.meshgrid(offs, offs, indexing="ij")
    cos, sin = math.cos(pose.yaw), math.sin(pose.yaw)
    if pose.yaw == 0.0:
        cos, sin = 1.0, 0.0
    wx = pose.x + cos * u - sin * v
    wy = pose.y + sin * u + cos * v
    t = raster.transform
    col = np.floor((wx - t.origin_x) / t.resolution + 0.5).astype(np.int64)
    row = np.floor((wy - t.origin_y) / t.resolution + 0.5).astype(np.int64)
    if col.min() < 0 or row.min() < 0 or col.max() >= raster.width or row.max() >= raster.height:
        raise OutOfMapError(f"frame footprint at ({pose.x:.1f}, {pose.y:.1f}) leaves the map")
    return FrameMask(raster.cells[row, col], index, pose.t)


def odometry(poses: Sequence[TruePose], noise: OdometryNoiseModel) -> list[OdometryDelta]:
    """One delta per consecutive pose pair."""
    if len(poses) < 2:
        raise ConfigError("odometry needs at least two poses")
    rng = np.random.default_rng(noise.seed)
    out = []
    yaw_err = 0.0
    for a, b in zip(poses, poses[1:]):
        ddx, ddy = b.x - a.x, b.y - a.y
        true_d = math.hypot(ddx, ddy)
        eta = float(rng.normal(0.0, noise.sigma_d)) if noise.sigma_d > 0 else 0.0
        d = max(true_d * (1 + noise.scale_bias) + eta, 0.0)
        yaw_err += noise.yaw_drift * true_d
        if noise.sigma_yaw > 0:
            yaw_err += float(rng.normal(0.0, noise.sigma_yaw))
        if true_d > 0:
            ang = math.atan2(ddy, ddx) + yaw_err
            vx, vy = d * math.cos(ang), d * math.sin(ang)
        else:
            vx = vy = 0.0
        out.append(OdometryDelta(d, vx, vy))
    return out


def dead_reckon(start: tuple[float, float], deltas: Sequence[OdometryDelta]) -> list[tuple[float, float]]:
    """Integrate odometry vectors from ``start``; includes the start point."""
    x, y = start
    path = [(x, y)]
    for dlt in deltas:
        x += dlt.dx
        y += dlt.dy
        path.append((x, y))
    return path


def corrupt(frame: FrameMask, noise: SegmentationNoiseModel, rng: np.random.Generator | None = None) -> FrameMask:
    """Flip each pixel independently with ``flip_prob``."""
    if noise.flip_prob == 0:
        return frame
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    flips = rng.random(frame.bits.shape) < noise.flip_prob
    return FrameMask(frame.bits ^ flips, frame.index, frame.timestamp)
