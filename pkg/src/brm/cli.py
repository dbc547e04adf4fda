"""``brm`` command line: rasterize, ratio-map, simulate, localize, evaluate, plot.

Every failure prints one JSON object on stderr (``{"error": ..., "message": ...}``)
and exits with status 1; argument errors exit with status 2.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from brm import ratio_map as rm
from brm.errors import BRMError, RunError
from brm.feature import extract, write_features_csv, write_frame
from brm.geo_raster import fit_transform, load_raster, parse_polygons, polygons_to_geojson, rasterize, save_raster
from brm.harness import (
    ExperimentConfig,
    ExperimentReport,
    build_raster,
    build_ratio_map,
    export,
    frame_side,
    run,
    write_candidates_csv,
)
from brm.matcher import Matcher, OdometryDelta
from brm.sim import corrupt, gen_trajectory, odometry, render_frame


def _config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_text("", overrides)


def cmd_rasterize(args) -> None:
    polys = parse_polygons(Path(args.polygons).read_bytes(), assume_projected=args.assume_projected)
    transform, width, height = fit_transform(polys, args.resolution, args.margin)
    raster = rasterize(polys, transform, width, height, max_cells=args.max_cells)
    save_raster(raster, args.output)
    print(json.dumps({"output": args.output, "width": width, "height": height,
                      "building_fraction": raster.building_fraction()}))


def cmd_synth_map(args) -> None:
    from brm.synthmap import synthetic_city

    polys = synthetic_city(args.seed, args.size)
    Path(args.output).write_text(json.dumps(polygons_to_geojson(polys)))
    print(json.dumps({"output": args.output, "polygons": len(polys)}))


def cmd_ratio_map(args) -> None:
    raster = load_raster(args.raster)
    camera = rm.CameraConfig(args.fov_alpha, args.altitude)
    mapset = rm.generate(raster, camera, args.n, args.stride)
    rm.save(mapset, args.output)
    rows, cols = mapset.shape
    print(json.dumps({"output": args.output, "lattice_cols": cols, "lattice_rows": rows,
                      "radii_px": mapset.radii_px()}))


def cmd_simulate(args) -> None:
    cfg = _config(args)
    cfg.check_files()
    raster = build_raster(cfg)
    mapset = build_ratio_map(cfg, raster)
    plan = cfg.flight_plan()
    poses = gen_trajectory(plan)
    deltas = [OdometryDelta(0.0)] + odometry(poses, cfg.odometry_noise())
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(plan.to_json() + "\n")
    with open(out / "poses.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "t", "x", "y", "z", "yaw"])
        for i, p in enumerate(poses):
            w.writerow([i, repr(p.t), repr(p.x), repr(p.y), repr(p.z), repr(p.yaw)])
    with open(out / "odometry.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "d", "dx", "dy"])
        for i, d in enumerate(deltas):
            w.writerow([i, repr(d.d), repr(d.dx), repr(d.dy)])
    seg = cfg.segmentation_noise()
    rng = np.random.default_rng(seg.seed)
    h = frame_side(mapset)
    rows = []
    if args.dump_frames:
        (out / "frames").mkdir(exist_ok=True)
    for i, p in enumerate(poses):
        try:
            fr = corrupt(render_frame(raster, p, cfg.camera(), h, pixel_size=raster.resolution, index=i), seg, rng)
        except BRMError as exc:
            raise RunError(str(exc), i) from exc
        if args.dump_frames:
            write_frame(out / "frames" / f"frame_{i}.pgm", fr)
        rows.append((i, extract(fr, mapset.n, mapset.radii_px())))
    write_features_csv(out / "features.csv", rows)
    print(json.dumps({"output": str(out), "frames": len(poses)}))


def _read_rows(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_localize(args) -> None:
    cfg = _config(args)
    mapset = rm.load(args.map)
    feats = _read_rows(args.features)
    odo = {int(r["frame_index"]): r for r in _read_rows(args.odometry)}
    matcher = Matcher(mapset, cfg.matcher())
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    events = []
    est = None
    with open(out / "estimates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "phase", "candidates", "est_x", "est_y"])
        for row in feats:
            i = int(row["frame_index"])
            f = np.array([float(row[f"f_{k}"]) for k in range(1, mapset.n + 1)])
            o = odo.get(i)
            delta = OdometryDelta(float(o["d"]), float(o["dx"]), float(o["dy"])) if o else OdometryDelta(0.0)
            try:
                state = matcher.step(f, delta)
            except BRMError as exc:
                raise RunError(str(exc), i) from exc
            if state.converged_now:
                events.append({"generation": state.generation, "estimate_x": state.estimate[0],
                               "estimate_y": state.estimate[1], "frame_index": i})
                est = state.estimate
            elif est is not None:
                est = (est[0] + delta.dx, est[1] + delta.dy)
            w.writerow([i, state.phase.value, len(state), "" if est is None else repr(est[0]),
                        "" if est is None else repr(est[1])])
            if args.dump_candidates:
                write_candidates_csv(out / f"candidates_{i}.csv", state)
    (out / "events.json").write_text(json.dumps(events, indent=1) + "\n")
    print(json.dumps({"output": str(out), "frames": len(feats), "convergence_events": len(events)}))


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    cfg.check_files()
    raster = build_raster(cfg)
    mapset = build_ratio_map(cfg, raster)
    out = Path(args.output or cfg.output_dir)
    if args.trials <= 1:
        report = run(cfg, raster, mapset)
        export(report, out, mapset)
        print(json.dumps(_summary(report)))
        return
    cfg = dataclasses.replace(cfg, keep_candidates=False)
    rows = []
    for seed in range(args.trials):
        report = run(cfg.with_seed(seed), raster, mapset)
        export(report, out / f"seed_{seed}")
        rows.append(dict(_summary(report), seed=seed))
        print(json.dumps(rows[-1]), flush=True)
    brm_med = float(np.median([r["rmse_whole_path"] for r in rows]))
    dr_med = float(np.median([r["dr_rmse_whole_path"] for r in rows]))
    wins = sum(r["rmse_whole_path"] < r["dr_rmse_whole_path"] for r in rows)
    summary = {"trials": rows, "median_rmse_whole_path": brm_med, "median_dr_rmse_whole_path": dr_med,
               "brm_better_than_dr": wins}
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")


def _summary(report: ExperimentReport) -> dict:
    first = report.first_convergence
    return {
        "rmse_whole_path": report.rmse_whole_path,
        "rmse_after_first_convergence": report.rmse_after_first_convergence,
        "dr_rmse_whole_path": report.dr_rmse_whole_path,
        "dr_rmse_after_first_convergence": report.dr_rmse_after_first_convergence,
        "convergence_events": len(report.events),
        "first_convergence_frame": None if first is None else first.frame,
    }


def cmd_plot(args) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    src = Path(args.report)
    if src.is_dir():
        src = src / "report.json"
    report = ExperimentReport.from_json(src.read_text())
    fr = report.frames
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot([f.truth_x for f in fr], [f.truth_y for f in fr], "g-", label="truth")
    ax.plot([f.dr_x for f in fr], [f.dr_y for f in fr], ":", color="grey", label="dead reckoning")
    ax.plot([f.est_x for f in fr], [f.est_y for f in fr], "b-", label="estimate")
    for e in report.events:
        ax.plot(e.estimate_x, e.estimate_y, "o", mfc="none", mec="r", ms=10)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    after = report.rmse_after_first_convergence
    ax.set_title(f"RMSE {report.rmse_whole_path:.1f} m (DR {report.dr_rmse_whole_path:.1f} m)"
                 + ("" if after is None else f", after convergence {after:.1f} m"))
    ax.legend(loc="best")
    out = args.output or str(src.with_name("trajectory.png"))
    fig.savefig(out, dpi=120, bbox_inches="tight")
    plt.close(fig)
    print(json.dumps({"output": out}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brm", description="Building-ratio-map global localization toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment_args(sp):
        sp.add_argument("--config", help="flat key = value configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    sp = sub.add_parser("rasterize", help="GeoJSON footprints to a PGM building raster")
    sp.add_argument("polygons")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--resolution", type=float, default=1.0)
    sp.add_argument("--margin", type=float, default=0.0)
    sp.add_argument("--max-cells", type=int, default=10**8)
    sp.add_argument("--assume-projected", action="store_true",
                    help="accept small coordinates that look like degrees")
    sp.set_defaults(func=cmd_rasterize)

    sp = sub.add_parser("synth-map", help="write the bundled synthetic city as GeoJSON")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--seed", type=int, default=2024)
    sp.add_argument("--size", type=float, default=2000.0)
    sp.set_defaults(func=cmd_synth_map)

    sp = sub.add_parser("ratio-map", help="precompute building-ratio layers from a raster")
    sp.add_argument("raster")
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--n", type=int, default=3)
    sp.add_argument("--stride", type=int, default=5)
    sp.add_argument("--fov-alpha", type=float, default=43.0)
    sp.add_argument("--altitude", type=float, default=150.0)
    sp.set_defaults(func=cmd_ratio_map)

    sp = sub.add_parser("simulate", help="fly the configured plan; write poses, odometry and features")
    experiment_args(sp)
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--dump-frames", action="store_true", help="also write every frame as PGM")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("localize", help="run the matcher on recorded features and odometry")
    experiment_args(sp)
    sp.add_argument("--map", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--odometry", required=True)
    sp.add_argument("-o", "--output", required=True)
    sp.add_argument("--dump-candidates", action="store_true")
    sp.set_defaults(func=cmd_localize)

    sp = sub.add_parser("evaluate", help="simulate, localise and report RMSE against truth")
    experiment_args(sp)
    sp.add_argument("-o", "--output")
    sp.add_argument("--trials", type=int, default=1, help="reseed the noise this many times")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("plot", help="draw truth, estimate and dead reckoning from a report")
    sp.add_argument("report", help="report.json or the directory holding it")
    sp.add_argument("-o", "--output")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (BRMError, OSError, KeyError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, RunError):
            err["frame"] = exc.frame
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
