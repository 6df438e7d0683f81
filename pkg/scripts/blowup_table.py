"""Blowup sweep with the L1 and weak norms of the major part side by side.

Usage: python3 scripts/blowup_table.py [--jobs N] [--widths W]
"""

import argparse
from concurrent.futures import ProcessPoolExecutor

from tiletower.cme import ScaleProfile
from tiletower.lab import blowup_point

COLUMNS = ("h", "tiles", "norm_lloglog", "l1_TM", "weak_TM", "weak_T", "l1_ratio", "weak_ratio", "key_min",
           "control_fraction")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--jobs", type=int, default=3)
    ap.add_argument("--widths", type=int, default=5)
    ap.add_argument("--heights", type=int, nargs="+", default=[2, 3, 4])
    a = ap.parse_args()
    args = [(ScaleProfile(L=1, h=h, s=2, widths=(a.widths,)).to_json(), "normalized", 0) for h in a.heights]
    with ProcessPoolExecutor(max_workers=a.jobs) as ex:
        rows = list(ex.map(blowup_point, args))
    print("\t".join(COLUMNS))
    for r in sorted(rows, key=lambda r: r["h"]):
        print("\t".join(f"{r[c]:.4g}" if isinstance(r[c], float) else str(r[c]) for c in COLUMNS))


if __name__ == "__main__":
    main()
