"""Level-set components of nu_j: how many are a single top, and how many are tiled by tops."""

import sys

from tiletower.cme import ScaleProfile, build_structure
from tiletower.counting import level_sets, nu_j_structural, top_table, top_witness

PROFILES = [(1, 2, 1, (1,)), (2, 2, 1, (1, 1)), (2, 3, 2, (1, 1)), (2, 3, 2, (5, 1)), (3, 2, 1, (1, 1, 1))]


def main(profiles=PROFILES):
    print("profile\tcomponents\tnot_a_top\tnot_tiled_by_tops")
    for L, h, s, w in profiles:
        cme = build_structure(ScaleProfile(L=L, h=h, s=s, widths=w))
        tt = top_table(cme)
        R = int(tt["scale"].max())
        tree = level_sets({j: nu_j_structural(cme, j, R, tt) for j in range(1, L + 1)}, h)
        rep = top_witness(tree, cme, tt)
        print(f"L={L},h={h},s={s},w={list(w)}\t{rep['components']}\t{rep['not_a_top']}\t{rep['not_tiled_by_tops']}")
    sys.stdout.flush()


if __name__ == "__main__":
    main()
