"""Exact Walsh system on the dyadic grid of [0, 1).

Values of Walsh functions are +-1, so everything here is integer arithmetic on
numpy arrays. Step functions with rational values are handled by clearing
denominators first: ``scaled_integers`` returns an integer array and the common
denominator, and partial sums are returned as exact Fractions.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import lcm

import numpy as np

from .dyadic import DyadicInterval, StepFunction


def _bits(n: int):
    i = 0
    while n:
        if n & 1:
            yield i
        n >>= 1
        i += 1


def walsh_at(n: int, x) -> int:
    """w_n(x) from the product of sgn sin(2^(i+1) pi x); 0 off [0, 1)."""
    x = Fraction(x)
    if not 0 <= x < 1:
        return 0
    s = 1
    for i in _bits(n):
        t = x * (1 << (i + 1))  # sin(pi t) > 0 iff floor(t) is even and t is not an integer
        if t.denominator == 1:
            return 0
        if (t.numerator // t.denominator) % 2:
            s = -s
    return s


def walsh(n: int, R: int) -> np.ndarray:
    """w_n at the 2^R cell centers, as int8 signs.

    Bit i of n flips the sign where binary digit i+1 of x is one, which for a
    cell index c at resolution R is bit R-1-i of c.
    """
    if n < 0 or n >= 1 << R:
        raise ValueError(f"need 0 <= n < 2^R, got n={n}, R={R}")
    c = np.arange(1 << R, dtype=np.int64)
    parity = np.zeros(1 << R, dtype=np.int64)
    for i in _bits(n):
        parity ^= (c >> (R - 1 - i)) & 1
    return (1 - 2 * parity).astype(np.int8)


def rademacher(i: int, R: int) -> np.ndarray:
    """r_{2^i} = w_{2^i}; r_0 is taken to be the constant 1."""
    return walsh(1 << i, R)


def wave_packet(n: int, l: int, j: int, R: int) -> tuple[int, np.ndarray]:
    """w_{n,l,j}(x) = 2^(j/2) w_n(2^j x - l) as (j, signs); the value is 2^(j/2) * signs."""
    if j > R or not 0 <= l < 1 << j:
        raise ValueError("packet must live on a dyadic interval of [0,1) resolved at R")
    out = np.zeros(1 << R, dtype=np.int8)
    width = 1 << (R - j)
    out[l * width:(l + 1) * width] = walsh(n, R - j)
    return j, out


def packet_norm_squared(n: int, l: int, j: int, R: int) -> Fraction:
    j, s = wave_packet(n, l, j, R)
    return Fraction(int(np.count_nonzero(s)) << j, 1 << R)


@dataclass(frozen=True)
class WalshBitile:
    """Dyadic rectangle of area two: |I| = 2^-j, omega = [m 2^(j+1), (m+1) 2^(j+1))."""

    time: DyadicInterval
    freq_index: int

    @property
    def j(self) -> int:
        return self.time.scale

    def upper(self) -> tuple[int, int, int]:
        """Upper son as packet parameters (n, l, j)."""
        return 2 * self.freq_index + 1, self.time.index, self.j

    def lower(self) -> tuple[int, int, int]:
        return 2 * self.freq_index, self.time.index, self.j

    def left(self) -> tuple[int, int, int]:
        return self.freq_index, 2 * self.time.index, self.j + 1

    def right(self) -> tuple[int, int, int]:
        return self.freq_index, 2 * self.time.index + 1, self.j + 1


def recursions_check(b: WalshBitile, R: int) -> bool:
    """sqrt2 w_{R_u} = w_left - w_right and sqrt2 w_{R_l} = w_left + w_right, on every cell.

    Both sides carry the common factor 2^((j+1)/2), so the check compares signs.
    """
    _, su = wave_packet(*b.upper(), R)
    _, sl = wave_packet(*b.lower(), R)
    _, a = wave_packet(*b.left(), R)
    _, c = wave_packet(*b.right(), R)
    a, c = a.astype(np.int64), c.astype(np.int64)
    return bool(np.array_equal(su, a - c) and np.array_equal(sl, a + c))


def product_identity(L: int, R: int | None = None) -> bool:
    """sum_{n < 2^L} w_n == prod_{i < L} (1 + r_{2^i}) pointwise."""
    R = L if R is None else R
    total = np.zeros(1 << R, dtype=np.int64)
    for n in range(1 << L):
        total += walsh(n, R)
    prod = np.ones(1 << R, dtype=np.int64)
    for i in range(L):
        prod *= 1 + rademacher(i, R).astype(np.int64)
    return bool(np.array_equal(total, prod))


# --- exact coefficients and partial sums -------------------------------------

def scaled_integers(f: StepFunction) -> tuple[np.ndarray, int]:
    """Integer array a and denominator d with f = a / d cell-wise."""
    vals = [Fraction(v) for v in f.values]
    d = lcm(*(v.denominator for v in vals)) if vals else 1
    return np.array([int(v * d) for v in vals], dtype=object), d


def _hadamard(a: np.ndarray) -> np.ndarray:
    """Natural-order fast Walsh-Hadamard transform (exact on object arrays)."""
    a = a.copy()
    h = 1
    n = len(a)
    while h < n:
        a = a.reshape(-1, 2, h)
        a = np.stack([a[:, 0] + a[:, 1], a[:, 0] - a[:, 1]], axis=1).reshape(n)
        h *= 2
    return a


def _bitrev(n: int, R: int) -> int:
    return int(format(n, f"0{R}b")[::-1], 2) if R else 0


def coefficient_numerators(f: StepFunction) -> tuple[np.ndarray, int]:
    """c[n] and D with <f, w_n> = c[n] / D for every n < 2^R."""
    a, d = scaled_integers(f)
    R = f.resolution
    h = _hadamard(a)
    perm = np.array([_bitrev(n, R) for n in range(1 << R)], dtype=np.int64)
    return h[perm], d << R


def partial_sum_direct(f: StepFunction, n: int) -> StepFunction:
    """W_n f = sum_{k <= n} <f, w_k> w_k, exact."""
    c, D = coefficient_numerators(f)
    R = f.resolution
    acc = np.zeros(1 << R, dtype=object)
    for k in range(n + 1):
        if c[k]:
            acc = acc + c[k] * walsh(k, R).astype(np.int64)
    return StepFunction(R, tuple(Fraction(int(v), D) for v in acc))


def _partial_sums_numerators(a: np.ndarray, R: int, n_max: int) -> np.ndarray:
    """Row n holds D * W_n f for n = 0..n_max where D = d 2^R (route A, integers)."""
    h = _hadamard(a)
    out = np.zeros((n_max + 1, 1 << R), dtype=object)
    acc = np.zeros(1 << R, dtype=object)
    for k in range(n_max + 1):
        ck = h[_bitrev(k, R)]
        if ck:
            acc = acc + ck * walsh(k, R).astype(np.int64)
        out[k] = acc
    return out


def _bitile_numerators(a: np.ndarray, R: int, target: int) -> np.ndarray:
    """D * sum over bitiles R with target in omega(R_u) of <f, w_{R_l}> w_{R_l}."""
    acc = np.zeros(1 << R, dtype=object)
    for j in range(R + 1):  # cell-scale bitiles only matter for target 2^R
        w = 1 << (j + 1)
        base = (target // w) * w
        if target < base + w // 2:
            continue  # target sits in the lower son
        m = base >> j
        if m >= 1 << (R - j):
            continue
        s = walsh(m, R - j).astype(np.int64)
        blocks = a.reshape(1 << j, 1 << (R - j))
        inner = blocks.dot(s)  # sum over each time interval of f * w_m(2^j y - l), times d
        acc = acc + ((inner[:, None] * s[None, :]) << j).reshape(1 << R)
    return acc


def partial_sum_bitile(f: StepFunction, n: int) -> StepFunction:
    """W_n f through the bitile expansion, using bitiles whose upper son holds n + 1."""
    a, d = scaled_integers(f)
    R = f.resolution
    if n + 1 > (1 << R):
        raise ValueError("need n < 2^R")
    acc = _bitile_numerators(a, R, n + 1)
    D = d << R
    return StepFunction(R, tuple(Fraction(int(v), D) for v in acc))


def partial_sum_routes_agree(f: StepFunction, n_max: int) -> bool:
    """Route A (Walsh coefficients) equals route B (bitiles) exactly for every n <= n_max."""
    a, _ = scaled_integers(f)
    R = f.resolution
    A = _partial_sums_numerators(a, R, n_max)
    return all(np.array_equal(A[n], _bitile_numerators(a, R, n + 1)) for n in range(n_max + 1))


def difference_identity(f: StepFunction, L: int, M: int) -> bool:
    """W_{2^L-1} f - W_{2^L-2^M-1} f equals f paired with the product kernel, exactly."""
    if not 0 < M < L <= f.resolution:
        raise ValueError("need 0 < M < L <= R")
    a, d = scaled_integers(f)
    R = f.resolution
    A = _partial_sums_numerators(a, R, (1 << L) - 1)
    lhs = A[(1 << L) - 1] - A[(1 << L) - (1 << M) - 1]
    r = [rademacher(i, R).astype(np.int64) for i in range(L)]
    K = np.ones((1 << R, 1 << R), dtype=np.int64)  # K[x, y]
    for i in range(M, L):
        K *= np.outer(r[i], r[i])
    for i in range(M):
        K *= 1 + np.outer(r[i], r[i])
    rhs = K.astype(object).dot(a)  # d * 2^R * <f, K(x, .)>, since <.,.> carries 2^-R
    return bool(np.array_equal(lhs, rhs))


def c_w(f: StepFunction, seq) -> StepFunction:
    """sup_j |W_{n_j} f| cell-wise, exact."""
    seq = sorted(set(seq))
    a, d = scaled_integers(f)
    R = f.resolution
    if seq[-1] >= 1 << R:
        raise ValueError("sequence exceeds the resolution")
    A = _partial_sums_numerators(a, R, seq[-1])
    best = np.max(np.abs(np.stack([A[n] for n in seq])), axis=0)
    D = d << R
    return StepFunction(R, tuple(Fraction(int(v), D) for v in best))


def single_scale_model(f: StepFunction, j: int) -> StepFunction:
    """Bitile sum at frequency 2^j: the one-scale operator, equal to the scale-j average."""
    a, d = scaled_integers(f)
    acc = _bitile_numerators(a, f.resolution, 1 << j)
    D = d << f.resolution
    return StepFunction(f.resolution, tuple(Fraction(int(v), D) for v in acc))


def c_aw(f: StepFunction, seq) -> np.ndarray:
    """sup_j |w_n(x) p.v. int w_n(-y) cot(pi (x-y)) f(y) dy|, numeric, at cell centers."""
    from .carleson import conjugate_step

    R = f.resolution
    vals = np.array([float(v) for v in f.values])
    best = np.zeros(1 << R)
    for n in seq:
        w = walsh(n, R).astype(float)
        # periodic w_n(-y) on cell c is w_n on the mirrored cell 2^R - 1 - c
        g = w[::-1] * vals
        best = np.maximum(best, np.abs(w * conjugate_step(g)))
    return best


# --- the boundary-cancellation experiment -----------------------------------

@dataclass(frozen=True)
class ColumnReport:
    heights: tuple
    walsh_ratio: tuple
    fourier_ratio: tuple
    scale: float

    def separation(self, h: int) -> float:
        i = self.heights.index(h)
        return self.fourier_ratio[i] / max(self.walsh_ratio[i], 1e-300)


def _column_walsh(F: np.ndarray, E: np.ndarray, a0: int, R: int, scales) -> Fraction:
    """sum over bitiles of the column of <chi_F, w_{R_l}> <w_{a0} w_{R_l}, chi_E>, exact."""
    wa = walsh(a0, R).astype(np.int64)
    total = 0
    for j in scales:
        w = 1 << (j + 1)
        base = (a0 // w) * w
        if a0 < base + w // 2:
            raise ValueError("a0 must sit in the upper son at every column scale")
        m = base >> j
        s = walsh(m, R - j).astype(np.int64)
        fb = F.astype(np.int64).reshape(1 << j, -1).dot(s)
        eb = (E.astype(np.int64) * wa).reshape(1 << j, -1).dot(s)
        total += int(np.dot(fb, eb)) << j
    return Fraction(total, 1 << (2 * R))


def boundary_cancellation(r: int = 11, R: int = 16, heights=(1, 2, 4, 8)) -> ColumnReport:
    """Column sums at a0 = 2^r - 1 on a shared sign-aligned set F.

    The column at height H consists of the tiles at frequency a0 whose time
    intervals contain the bottom J (scale r-1) at the H scales above it. F is the
    set where cos(2 pi a0 y) has the sign of the Fourier column kernel, i.e. the
    set the Fourier column is aligned to. E is the left half of J.
    """
    from .carleson import column_kernel

    a0 = (1 << r) - 1
    jb = r - 1
    J = DyadicInterval(jb, (1 << jb) // 2 + 3)
    n = 1 << R
    y = (np.arange(n) + 0.5) / n
    e_lo, e_hi = float(J.left), float(J.left + J.length / 2)
    E = (y >= e_lo) & (y < e_hi)
    scales_top = [jb - h + 1 for h in heights]
    if min(scales_top) < 0:
        raise ValueError("column too tall for r")
    phi = column_kernel(e_lo, e_hi, range(min(scales_top), jb + 1), y)
    align = np.sign(phi) * np.sign(np.cos(2 * np.pi * a0 * y))
    F = (align > 0) & ~E
    scale = float(np.count_nonzero(F)) / n * (e_hi - e_lo)
    w_ratio, f_ratio = [], []
    for h, top in zip(heights, scales_top):
        ks = range(top, jb + 1)
        w = _column_walsh(F, E, a0, R, ks)
        w_ratio.append(abs(float(w)) / scale)
        k = column_kernel(e_lo, e_hi, ks, y)
        f_ratio.append(abs(float(np.sum(np.cos(2 * np.pi * a0 * y) * k * F)) / n) / scale)
    return ColumnReport(tuple(heights), tuple(w_ratio), tuple(f_ratio), scale)
