"""Noise-free convergence on the synthetic map as a function of the residual threshold e1.

Prints, for each e1, the first convergence frame, its error, the smallest
candidate set reached and whether the true cell stayed in every set.

    python3 scripts/e1_sweep.py --e1 0.05 0.1 0.2 0.3
"""

from __future__ import annotations

import argparse
import dataclasses

from brm.harness import ExperimentConfig, build_ratio_map, build_raster, run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--e1", type=float, nargs="+", default=[0.05, 0.1, 0.15, 0.2, 0.3])
    ap.add_argument("--k-cap", type=int, default=50_000)
    args = ap.parse_args()

    base = ExperimentConfig(scale_bias=0.0, sigma_d=0.0, k_cap=args.k_cap, keep_candidates=False)
    raster = build_raster(base)
    mapset = build_ratio_map(base, raster)
    print("e1      first_event  error_m  min_set  truth_always_in_set")
    for e1 in args.e1:
        r = run(dataclasses.replace(base, e1=e1), raster, mapset)
        ev = r.first_convergence
        frame = "-" if ev is None else str(ev.frame)
        err = "-" if ev is None else f"{ev.error:.1f}"
        smallest = min(f.candidates for f in r.frames)
        sound = all(f.truth_in_set for f in r.frames)
        print(f"{e1:<7g} {frame:>11}  {err:>7}  {smallest:>7}  {sound}")


if __name__ == "__main__":
    main()
