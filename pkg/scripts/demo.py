"""End-to-end demo through the CLI: one exported lap with a tight threshold, then a plot.

    python3 scripts/demo.py --out demo_out
"""

from __future__ import annotations

import argparse
from pathlib import Path

from brm.cli import main as brm


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--e1", type=float, default=0.05)
    args = ap.parse_args()

    out = Path(args.out)
    overrides = ["--set", f"e1={args.e1}"]
    if brm(["evaluate", *overrides, "-o", str(out)]) != 0:
        raise SystemExit(1)
    if brm(["plot", str(out / "report.json"), "-o", str(out / "trajectory.png")]) != 0:
        raise SystemExit(1)
    print(f"wrote {out / 'report.json'} and {out / 'trajectory.png'}")


if __name__ == "__main__":
    main()
