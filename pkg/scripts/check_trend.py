"""Check that a grid report shows ABX error rising as lambda coarsens the units.

Usage: python3 scripts/check_trend.py OUT/grid.json [--min-rise 0.0]

Meant for grids built from real features with phone items.  For each
codebook the ABX error at the lowest-bitrate sweep point should exceed the
error at lambda=0.  Exits 1 if any codebook goes the other way.
"""

import argparse
import json
import sys
from collections import defaultdict


def trend(rows):
    by_cb = defaultdict(list)
    for row in rows:
        by_cb[f'{row["codebook"]} K={row["K"]}'].append(row)
    out = {}
    for name, pts in by_cb.items():
        pts = sorted(pts, key=lambda r: r["lambda"])
        out[name] = (pts[0]["abx_error"], pts[-1]["abx_error"], pts[0]["bitrate"], pts[-1]["bitrate"])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("grid_json")
    ap.add_argument("--min-rise", type=float, default=0.0, help="required absolute ABX increase")
    args = ap.parse_args(argv)
    with open(args.grid_json, encoding="utf-8") as f:
        rows = json.load(f)
    ok = True
    for name, (e0, e1, b0, b1) in sorted(trend(rows).items()):
        rises = e1 - e0 > args.min_rise
        ok &= rises
        print(f"{'ok  ' if rises else 'FLAT'} {name}: ABX {e0:.4f} @ {b0:.1f} b/s -> {e1:.4f} @ {b1:.1f} b/s")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
