"""Reconstruction error as a function of light elevation (amount of shadow).

Bakes the same terrain under ring lights at several elevations, reconstructs
each with the default configuration and prints one row per elevation.

    python scripts/shadow_amount_sweep.py --elevations 80 60 40 20 --out results/sweep.json
"""

import argparse
import json
import sys

from reconstruct_bumps import parse_set, run


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--elevations", type=float, nargs="+", default=[80, 60, 40, 20])
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--lights", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", default=None)
    args = p.parse_args(argv)
    rows = []
    print(f"{'elev':>5} {'shadow':>7} {'nMZE':>7} {'MAE':>7} {'sec':>6}")
    for e in args.elevations:
        r = run(args.size, args.lights, e, args.seed, parse_set(args.set), log_every=0)
        rows.append(r)
        print(f"{e:5.0f} {r['shadow_fraction']:7.3f} {r['nmze']:7.3f} {r['normal_mae_deg']:7.2f} {r['seconds']:6.0f}",
              flush=True)
    if args.out:
        with open(args.out, "w") as f:
            json.dump(rows, f, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
