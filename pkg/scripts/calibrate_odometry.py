"""Dead-reckoning RMSE over the default flight for a grid of odometry noise settings.

Only the odometry is simulated, so this runs in well under a second. Used to
pick scale_bias and sigma_d so the dead-reckoning RMSE lands in a target band.

    python3 scripts/calibrate_odometry.py --scale-bias 0.1 0.2 0.3 --sigma-d 1 2 --trials 20
"""

from __future__ import annotations

import argparse
import statistics

from brm.harness import ExperimentConfig, rmse
from brm.sim import OdometryNoiseModel, dead_reckon, gen_trajectory, odometry


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale-bias", type=float, nargs="+", default=[0.1, 0.15, 0.2, 0.25, 0.3])
    ap.add_argument("--sigma-d", type=float, nargs="+", default=[0.0, 1.0, 2.0])
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--band", type=float, nargs=2, default=[30.0, 70.0])
    args = ap.parse_args()

    poses = gen_trajectory(ExperimentConfig().flight_plan())
    truth = [(p.x, p.y) for p in poses]
    lo, hi = args.band
    print("scale_bias  sigma_d  min_rmse  median  max_rmse  all_in_band")
    for bias in args.scale_bias:
        for sigma in args.sigma_d:
            vals = []
            for seed in range(args.trials):
                deltas = odometry(poses, OdometryNoiseModel(bias, sigma, seed=seed))
                vals.append(rmse(dead_reckon(truth[0], deltas), truth))
            inside = all(lo <= v <= hi for v in vals)
            print(f"{bias:>10g}  {sigma:>7g}  {min(vals):8.1f}  {statistics.median(vals):6.1f}  "
                  f"{max(vals):8.1f}  {inside}")


if __name__ == "__main__":
    main()
