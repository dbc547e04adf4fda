"""End-to-end experiment runner: map, simulated flight, matcher, evaluation.

A run renders a binary frame at every true pose, feeds its ratio features and
the noisy odometry distance to the matcher, and records the estimate next to
a pure dead-reckoning baseline. The report splits RMSE into the whole path
and the frames after the first convergence event.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from brm import ratio_map as rm
from brm.errors import BRMError, ConfigError, RunError
from brm.feature import extract
from brm.geo_raster import BuildingRaster, fit_transform, load_raster, parse_polygons, rasterize
from brm.matcher import CandidateSet, Matcher, MatcherConfig, OdometryDelta, Phase, convergence_check
from brm.ratio_map import CameraConfig, RatioMapSet
from brm.sim import (
    FlightPlan,
    OdometryNoiseModel,
    SegmentationNoiseModel,
    corrupt,
    dead_reckon,
    gen_trajectory,
    odometry,
    render_frame,
)
from brm.synthmap import synthetic_raster


# --------------------------------------------------------------------------- configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of one experiment. Matcher and camera defaults are the reference settings (n=3, 43 deg, 150 m, e1=0.3, 25 m, 75 m).

    Map source precedence: ``raster`` (PGM + sidecar), then ``polygons``
    (GeoJSON, rasterised at ``resolution`` with ``margin``), then the bundled
    synthetic city for ``synthetic_seed``. ``ratio_map`` is a cache path: it is
    loaded when present and written after generation otherwise.

    The flight is ``plan`` (JSON) when given, else a counter-clockwise square
    of side ``side`` with its south-west corner at ``(start_x, start_y)``,
    entered ``start_offset`` metres east of that corner. The default offset
    keeps every pose on the 5 m lattice while no frame falls on a corner.
    """

    polygons: str | None = None
    raster: str | None = None
    ratio_map: str | None = None
    output_dir: str = "brm_out"
    synthetic_seed: int = 2024
    resolution: float = 1.0
    margin: float = 100.0
    assume_projected: bool = False

    n: int = 3
    fov_alpha: float = 43.0
    altitude_zl: float = 150.0
    frame_w: int = 640
    frame_h: int = 480
    stride: int = 5

    e1: float = 0.3
    epsilon: float = 25.0
    d_max: float = 75.0
    k_cap: int = 50_000
    continue_after_convergence: bool = True

    plan: str | None = None
    start_x: float = 700.5
    start_y: float = 900.5
    side: float = 250.0
    start_offset: float = 10.0
    speed: float = 5.0
    frame_interval: float = 5.0

    odometry_seed: int = 0
    segmentation_seed: int = 0
    flip_prob: float = 0.0
    scale_bias: float = 0.2
    sigma_d: float = 2.0
    yaw_drift: float = 0.0
    sigma_yaw: float = 0.0

    kidnap_frames: tuple[int, ...] = ()
    keep_candidates: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kidnap_frames", tuple(sorted({int(i) for i in self.kidnap_frames})))
        # constructing the module configs runs their invariant checks
        self.camera()
        self.matcher()
        self.odometry_noise()
        self.segmentation_noise()
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ConfigError(f"resolution must be positive, got {self.resolution}")
        if self.side <= 0 or self.speed <= 0 or self.frame_interval <= 0:
            raise ConfigError("side, speed and frame_interval must be positive")
        if any(i < 0 for i in self.kidnap_frames):
            raise ConfigError("kidnap frame indices must be >= 0")

    def camera(self) -> CameraConfig:
        return CameraConfig(self.fov_alpha, self.altitude_zl, self.frame_w, self.frame_h)

    def matcher(self) -> MatcherConfig:
        return MatcherConfig(self.e1, self.epsilon, self.d_max, self.k_cap, self.continue_after_convergence)

    def odometry_noise(self) -> OdometryNoiseModel:
        return OdometryNoiseModel(self.scale_bias, self.sigma_d, self.yaw_drift, self.sigma_yaw, self.odometry_seed)

    def segmentation_noise(self) -> SegmentationNoiseModel:
        return SegmentationNoiseModel(self.flip_prob, self.segmentation_seed)

    def flight_plan(self) -> FlightPlan:
        if self.plan is not None:
            return FlightPlan.from_json(Path(self.plan).read_text())
        return FlightPlan.square((self.start_x, self.start_y), self.side, self.start_offset, speed=self.speed,
                                 frame_interval=self.frame_interval, altitude=self.altitude_zl)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same experiment with both noise generators reseeded."""
        return dataclasses.replace(self, odometry_seed=seed, segmentation_seed=seed)

    def check_files(self) -> None:
        for name in ("polygons", "raster", "plan"):
            path = getattr(self, name)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{name} file {path} does not exist")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["kidnap_frames"] = list(self.kidnap_frames)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(d)
        if "kidnap_frames" in d:
            d["kidnap_frames"] = tuple(d["kidnap_frames"])
        return cls(**d)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                v = ""
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, tuple):
                v = ", ".join(str(i) for i in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, overrides: Sequence[str] = ()) -> "ExperimentConfig":
        """Parse ``key = value`` lines (``#`` comments), then apply ``key=value`` overrides."""
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                           inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string("[brm]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"bad config file: {exc}") from None
        raw = dict(parser["brm"])
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not key=value")
            raw[key.strip()] = value.strip()
        return cls.from_dict({k: _coerce(k, v) for k, v in raw.items()})

    @classmethod
    def from_file(cls, path: str | Path, overrides: Sequence[str] = ()) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(), overrides)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, value: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    try:
        if kind == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "str | None":
            return value or None
        if kind == "tuple[int, ...]":
            return tuple(int(v) for v in value.replace(",", " ").split())
        return value
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} as {kind}") from None


# --------------------------------------------------------------------------- report

@dataclass(frozen=True)
class FrameRecord:
    index: int
    t: float
    truth_x: float
    truth_y: float
    est_x: float
    est_y: float
    dr_x: float
    dr_y: float
    phase: str
    candidates: int
    spread: float | None
    truth_in_set: bool
    kidnapped: bool
    features: tuple[float, ...]


@dataclass(frozen=True)
class ConvergenceEvent:
    frame: int
    generation: int
    estimate_x: float
    estimate_y: float
    spread: float
    error: float
    distance_flown: float


@dataclass(eq=False)
class ExperimentReport:
    config: dict[str, Any]
    frames: list[FrameRecord]
    events: list[ConvergenceEvent]
    rmse_whole_path: float
    rmse_after_first_convergence: float | None
    dr_rmse_whole_path: float
    dr_rmse_after_first_convergence: float | None
    lattice_shape: tuple[int, int]
    # per-frame candidate sets for export; not part of the serialised report
    snapshots: list[CandidateSet] = field(default_factory=list, repr=False)

    @property
    def first_convergence(self) -> ConvergenceEvent | None:
        return self.events[0] if self.events else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "lattice_shape": list(self.lattice_shape),
            "rmse_whole_path": self.rmse_whole_path,
            "rmse_after_first_convergence": self.rmse_after_first_convergence,
            "dr_rmse_whole_path": self.dr_rmse_whole_path,
            "dr_rmse_after_first_convergence": self.dr_rmse_after_first_convergence,
            "events": [dataclasses.asdict(e) for e in self.events],
            "frames": [dict(dataclasses.asdict(f), features=list(f.features)) for f in self.frames],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentReport":
        frames = [FrameRecord(**dict(f, features=tuple(f["features"]))) for f in d["frames"]]
        events = [ConvergenceEvent(**e) for e in d["events"]]
        return cls(d["config"], frames, events, d["rmse_whole_path"], d["rmse_after_first_convergence"],
                   d["dr_rmse_whole_path"], d["dr_rmse_after_first_convergence"], tuple(d["lattice_shape"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, ExperimentReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def rmse(estimates: Sequence[tuple[float, float]], truths: Sequence[tuple[float, float]]) -> float:
    """Root mean square Euclidean error between paired points."""
    if len(estimates) != len(truths):
        raise ConfigError(f"rmse needs equal lengths, got {len(estimates)} and {len(truths)}")
    if not estimates:
        raise ConfigError("rmse needs at least one pair")
    e = np.asarray(estimates, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    return float(math.sqrt(np.mean(np.sum((e - t) ** 2, axis=1))))


def split_rmse(frames: Sequence[FrameRecord], events: Sequence[ConvergenceEvent], which: str = "est"):
    """(whole path, after first convergence or None) for the ``est`` or ``dr`` track."""
    pts = [(getattr(f, f"{which}_x"), getattr(f, f"{which}_y")) for f in frames]
    truth = [(f.truth_x, f.truth_y) for f in frames]
    whole = rmse(pts, truth)
    after = None
    if events:
        k = events[0].frame + 1
        if k < len(frames):
            after = rmse(pts[k:], truth[k:])
    return whole, after


# --------------------------------------------------------------------------- run

def build_raster(cfg: ExperimentConfig) -> BuildingRaster:
    if cfg.raster is not None:
        return load_raster(cfg.raster)
    if cfg.polygons is not None:
        polys = parse_polygons(Path(cfg.polygons).read_bytes(), assume_projected=cfg.assume_projected)
        transform, width, height = fit_transform(polys, cfg.resolution, cfg.margin)
        return rasterize(polys, transform, width, height)
    return synthetic_raster(cfg.synthetic_seed, resolution=cfg.resolution)


def build_ratio_map(cfg: ExperimentConfig, raster: BuildingRaster) -> RatioMapSet:
    """Load the cached ratio map when it matches the configuration, else generate it."""
    if cfg.ratio_map is not None and Path(cfg.ratio_map).exists():
        mapset = rm.load(cfg.ratio_map)
        expect = (cfg.n, cfg.stride, raster.transform, cfg.altitude_zl, cfg.fov_alpha)
        got = (mapset.n, mapset.stride, mapset.transform, mapset.altitude_zl, mapset.fov_alpha)
        if got != expect:
            raise ConfigError(f"cached ratio map {cfg.ratio_map} does not match the configuration")
        return mapset
    mapset = rm.generate(raster, cfg.camera(), cfg.n, cfg.stride)
    if cfg.ratio_map is not None:
        rm.save(mapset, cfg.ratio_map)
    return mapset


def frame_side(mapset: RatioMapSet) -> int:
    """Frame side that holds the widest map disk at map resolution."""
    return 2 * mapset.radii_px()[0] + 1


def run(cfg: ExperimentConfig, raster: BuildingRaster | None = None,
        mapset: RatioMapSet | None = None) -> ExperimentReport:
    """Simulate the configured flight and localise every frame.

    ``raster`` and ``mapset`` may be passed in to share one map between
    trials; otherwise they are built from the configuration.
    """
    cfg.check_files()
    if raster is None:
        raster = build_raster(cfg)
    if mapset is None:
        mapset = build_ratio_map(cfg, raster)
    poses = gen_trajectory(cfg.flight_plan())
    deltas = [OdometryDelta(0.0)] + (odometry(poses, cfg.odometry_noise()) if len(poses) > 1 else [])
    dr_path = dead_reckon((poses[0].x, poses[0].y), deltas[1:])
    seg = cfg.segmentation_noise()
    seg_rng = np.random.default_rng(seg.seed)
    camera = cfg.camera()
    h = frame_side(mapset)
    radii = mapset.radii_px()
    cols = mapset.shape[1]
    matcher = Matcher(mapset, cfg.matcher())

    frames: list[FrameRecord] = []
    events: list[ConvergenceEvent] = []
    snapshots: list[CandidateSet] = []
    est = (poses[0].x, poses[0].y)
    flown = 0.0
    was_converged = False
    for i, pose in enumerate(poses):
        try:
            if i > 0:
                flown += math.hypot(pose.x - poses[i - 1].x, pose.y - poses[i - 1].y)
            kidnapped = i in cfg.kidnap_frames
            if kidnapped:
                matcher.reset()
            frame = render_frame(raster, pose, camera, h, pixel_size=raster.resolution, index=i)
            frame = corrupt(frame, seg, seg_rng)
            f = extract(frame, mapset.n, radii)
            state = matcher.step(f, deltas[i])
        except BRMError as exc:
            raise RunError(str(exc), i) from exc

        if state.converged_now:
            est = state.estimate
        else:
            est = (est[0] + deltas[i].dx, est[1] + deltas[i].dy)
        is_conv = state.converged_now
        spread = None
        if not state.empty:
            _, spread = convergence_check(state.x, state.y, cfg.d_max)
        if is_conv and not was_converged:
            events.append(ConvergenceEvent(i, state.generation, est[0], est[1], spread,
                                           math.hypot(est[0] - pose.x, est[1] - pose.y), flown))
        was_converged = is_conv
        tr, tc = mapset.nearest_cell((pose.x, pose.y))
        in_set = bool(np.any(state.cells == tr * cols + tc))
        frames.append(FrameRecord(i, pose.t, pose.x, pose.y, est[0], est[1], dr_path[i][0], dr_path[i][1],
                                  state.phase.value, len(state), spread, in_set, kidnapped,
                                  tuple(float(v) for v in f)))
        if cfg.keep_candidates:
            snapshots.append(state)

    whole, after = split_rmse(frames, events, "est")
    dr_whole, dr_after = split_rmse(frames, events, "dr")
    return ExperimentReport(cfg.to_dict(), frames, events, whole, after, dr_whole, dr_after,
                            mapset.shape, snapshots)


# --------------------------------------------------------------------------- export

_PHASE_COLOUR = {Phase.SEARCHING.value: 0, Phase.TRACKING.value: 1, Phase.CONVERGED.value: 2}


def heatmap_image(state: CandidateSet, mapset: RatioMapSet) -> np.ndarray:
    """RGB image at lattice size: grey first-layer ratios, candidates in red.

    Red intensity grows with the number of candidate entries on a cell. Row 0
    of the image is the northern-most lattice row.
    """
    rows, cols = mapset.shape
    base = np.nan_to_num(mapset.stack[0], nan=0.0)
    grey = (255 - np.round(base * 160)).astype(np.uint8)
    img = np.repeat(grey[:, :, None], 3, axis=2)
    if not state.empty:
        counts = np.bincount(state.cells, minlength=rows * cols).reshape(rows, cols)
        hit = counts > 0
        level = np.log1p(counts[hit]) / math.log1p(counts.max())
        img[hit, 0] = 255
        img[hit, 1] = np.round(200 * (1 - level)).astype(np.uint8)
        img[hit, 2] = np.round(200 * (1 - level)).astype(np.uint8)
    return img[::-1]


def write_candidates_csv(path: Path, state: CandidateSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "x", "y", "residual", "parent_index"])
        for x, y, r, p in zip(state.x.tolist(), state.y.tolist(), state.residuals.tolist(), state.parents.tolist()):
            w.writerow([state.generation, repr(x), repr(y), repr(r), p])


def export(report: ExperimentReport, out_dir: str | Path, mapset: RatioMapSet | None = None) -> list[Path]:
    """Write the trajectory CSV and report JSON, plus per-frame dumps when snapshots exist.

    Heat maps need the ratio map for their background and are written only
    when ``mapset`` is given. Stale per-frame files from earlier exports are
    removed first, so exporting the same report twice yields the same files.
    """
    from PIL import Image

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for old in list(out.glob("candidates_*.csv")) + list(out.glob("heatmap_*.png")):
            old.unlink()
        written = []
        traj = out / "trajectory.csv"
        with open(traj, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "truth_x", "truth_y", "est_x", "est_y", "phase"])
            for f in report.frames:
                w.writerow([repr(f.t), repr(f.truth_x), repr(f.truth_y), repr(f.est_x), repr(f.est_y), f.phase])
        written.append(traj)
        rep = out / "report.json"
        rep.write_text(report.to_json())
        written.append(rep)
        for i, state in enumerate(report.snapshots):
            p = out / f"candidates_{i}.csv"
            write_candidates_csv(p, state)
            written.append(p)
            if mapset is not None:
                p = out / f"heatmap_{i}.png"
                Image.fromarray(heatmap_image(state, mapset), mode="RGB").save(p, format="PNG")
                written.append(p)
    except OSError as exc:
        raise ConfigError(f"cannot write to {out}: {exc}") from None
    return written
