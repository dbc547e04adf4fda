"""Seeded drift trials: matcher RMSE against dead reckoning over the default square flight.

    python3 scripts/drift_trials.py --trials 20
    python3 scripts/drift_trials.py --trials 5 --set e1=0.05
"""

from __future__ import annotations

import argparse
import dataclasses
import statistics

from brm.harness import ExperimentConfig, build_ratio_map, build_raster, run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    base = dataclasses.replace(ExperimentConfig.from_text("", args.set), keep_candidates=False)
    raster = build_raster(base)
    mapset = build_ratio_map(base, raster)
    brm, dr = [], []
    print("seed  brm_rmse  dr_rmse  events")
    for seed in range(args.trials):
        r = run(base.with_seed(seed), raster, mapset)
        brm.append(r.rmse_whole_path)
        dr.append(r.dr_rmse_whole_path)
        print(f"{seed:>4}  {r.rmse_whole_path:8.1f}  {r.dr_rmse_whole_path:7.1f}  {len(r.events):>6}")
    wins = sum(b < d for b, d in zip(brm, dr))
    print(f"matcher better in {wins}/{args.trials}; median {statistics.median(brm):.1f} m "
          f"vs dead reckoning {statistics.median(dr):.1f} m")


if __name__ == "__main__":
    main()
