"""weak(nu)/h and |nu|_1 at matched profiles h = 2, 3, 4 (h = 4 takes a few seconds)."""

from tiletower.counting import extremality_experiment, matched_profile

if __name__ == "__main__":
    print("h\tL\tnu_l1\tnu_weak\tratio")
    for r in extremality_experiment([matched_profile(h) for h in (2, 3, 4)]):
        print(f"{r['h']}\t{r['L']}\t{r['nu_l1']:.4f}\t{r['nu_weak']:.4f}\t{r['ratio']:.4f}")
