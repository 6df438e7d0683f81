"""Walsh maximal partial sums along 2^j against the analytic Walsh model.

For indicator-like inputs, prints weak(c_w f)/|f|_1 and weak(c_aw f)/|f|_1 as
more terms of the dyadic sequence are included.
"""

from fractions import Fraction

import numpy as np

from tiletower.dyadic import StepFunction, weak_l1_norm
from tiletower.walsh import c_aw, c_w


def weak_of(values, R):
    a = np.sort(np.abs(values))[::-1]
    return float(np.max(a * np.arange(1, len(a) + 1))) / (1 << R)


def main(R=10, trials=20, seed=0):
    rng = np.random.default_rng(seed)
    print("terms\tc_w max\tc_aw max")
    for terms in range(2, R + 1, 2):
        seq = [1 << j for j in range(terms)]
        ws, aws = [], []
        for _ in range(trials):
            lo = int(rng.integers(0, (1 << R) - 8))
            width = int(rng.integers(1, 8))
            vals = [0] * (1 << R)
            vals[lo:lo + width] = [1] * width
            f = StepFunction.exact(R, vals)
            l1 = float(f.l1_norm())
            ws.append(float(weak_l1_norm(c_w(f, seq))) / l1)
            aws.append(weak_of(c_aw(f, seq), R) / l1)
        print(f"{terms}\t{max(ws):.3f}\t{max(aws):.3f}")


if __name__ == "__main__":
    main()
