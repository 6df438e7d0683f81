"""Sign-aligned sets F_j and the extremal function f = sum_j r_j chi_{F_j}.

Inside a piece I (the right half of a deepest-layer bottom), F_j is described by
binary digits. Every level frequency a = 2^p owns the digit pair (p+1, p+2):
cos(2 pi a y) >= 0 exactly when the two digits agree, so a sign S[I](a) = +1
asks for equal digits and -1 for different ones. The highest frequency instead
fixes the pair outright (00 for +1, 10 for -1), which places a single quarter-period
run at the center of each half-period component. All other digits are free, so
|F_j ∩ I| = 2^-(c+1) |I| with c the number of level frequencies.

Because of this structure the integrals int_{F ∩ I} e^(2 pi i 2^q y) dy have a
closed product form (``piece_integrals``), used by the operator engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dyadic import DyadicInterval, MeasurableSet, StepFunction
from .norms import mu


# --- closed-form digit integrals -------------------------------------------------

def _ph(p: int, q) -> np.ndarray:
    """e^(2 pi i 2^(p-q)); equal to 1 when q <= p."""
    q = np.asarray(q)
    d = q - p
    theta = np.where(d > 0, np.ldexp(1.0, -np.clip(d, 1, 1100).astype(np.int64)), 0.0)
    return np.exp(2j * np.pi * theta)


def _free_log(d_max: int) -> np.ndarray:
    """cumulative sum over d = 1..n of log((1 + e^(2 pi i 2^-d))/2); index 0 is 0, d = 1 gives -inf."""
    d = np.arange(1, d_max + 1)
    th = np.ldexp(1.0, -np.minimum(d, 1100))
    with np.errstate(divide="ignore"):
        vals = 1j * np.pi * th + np.log(np.cos(np.pi * th))
    return np.concatenate([[0.0 + 0j], np.cumsum(vals)])


@dataclass(frozen=True)
class DigitSet:
    """Digit constraints shared by the pieces of one level; the signs vary per piece."""

    exps: tuple  # sorted exponents of the level frequencies

    @property
    def c(self) -> int:
        return len(self.exps)

    @property
    def top(self) -> int:
        """Last constrained digit position."""
        return self.exps[-1] + 2

    def density(self) -> Fraction:
        return Fraction(1, 1 << (self.c + 1))

    def window_factors(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-window factors (sign +1, sign -1) for the frequency 2^p."""
        e = np.array(self.exps)
        h1, h2 = _ph(p, e + 1), _ph(p, e + 2)
        plus = (1 + h1 * h2) / 4
        minus = (h1 + h2) / 4
        plus[-1] = 0.25  # fixed 00 run
        minus[-1] = h1[-1] / 4  # fixed 10 run
        return plus, minus

    def rest_log(self, p: int, table: np.ndarray | None = None) -> complex | None:
        """log of the free-digit and tail factors for 2^p, or None when they vanish."""
        Q = self.top
        if p >= Q:
            return None  # whole periods of 2^p fit in every constrained block
        if table is None:
            table = _free_log(Q - p + 1)
        total = table[Q - p]
        for e in self.exps:
            for q in (e + 1, e + 2):
                if q > p:
                    total -= table[q - p] - table[q - p - 1]
        if not np.isfinite(total.real):
            return None  # digit p+1 is free, so the integral cancels exactly
        th = math.ldexp(1.0, p - Q)
        tail = np.exp(1j * np.pi * th) * np.sinc(th)  # (e^(2 pi i th) - 1)/(2 pi i th)
        return total + np.log(tail)

    def integrals(self, p: int, neg: np.ndarray, length) -> np.ndarray:
        """int_{F ∩ I} e^(2 pi i 2^p y) dy for pieces of the given length; neg[i, w] marks sign -1.

        Pieces must be no shorter than 2^-p, so that 2^p runs whole periods from each left end.
        """
        rest = self.rest_log(p)
        neg = np.atleast_2d(neg)
        if rest is None:
            return np.zeros(neg.shape[0], dtype=complex)
        plus, minus = self.window_factors(p)
        base = np.sum(np.log(plus))
        delta = np.log(minus) - np.log(plus)
        return float(length) * np.exp(base + rest + neg.astype(float) @ delta)


def piece_integrals(ds: DigitSet, alpha_exps, neg: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Matrix G[piece, k] = int_{F ∩ I_piece} e^(2 pi i 2^(alpha_exps[k]) y) dy."""
    neg = np.atleast_2d(neg).astype(float)
    out = np.zeros((neg.shape[0], len(alpha_exps)), dtype=complex)
    if not len(alpha_exps):
        return out
    table = _free_log(ds.top - min(alpha_exps) + 2)
    lengths = np.asarray(lengths, dtype=float)
    for k, p in enumerate(alpha_exps):
        rest = ds.rest_log(int(p), table)
        if rest is None:
            continue
        plus, minus = ds.window_factors(int(p))
        base = np.sum(np.log(plus))
        delta = np.log(minus) - np.log(plus)
        out[:, k] = lengths * np.exp(base + rest + neg @ delta)
    return out


def brute_integral(ds: DigitSet, p: int, signs: dict, I: DyadicInterval, extra: int = 3) -> complex:
    """Reference: enumerate the allowed digit strings of one piece exactly and integrate."""
    B = I.scale
    Q = ds.top + extra
    total = 0j
    n = Q - B
    lo = float(I.left)
    cell = math.ldexp(1.0, -Q)
    a = math.ldexp(1.0, p)
    for m in range(1 << n):
        y0 = lo + m * cell
        if not member(ds, signs, I, Fraction(I.left) + Fraction(m, 1 << Q)):
            continue
        # exact integral of e^(2 pi i a y) over [y0, y0 + cell)
        th = a * cell
        if th == int(th):
            continue
        total += np.exp(2j * np.pi * ((a * (y0 % (1 / a))) % 1)) * (np.exp(2j * np.pi * th) - 1) / (2j * np.pi * a)
    return total


def member(ds: DigitSet, signs: dict, I: DyadicInterval, y) -> bool:
    """Membership of the point y (exact) in F ∩ I; `signs` maps exponent -> +1/-1."""
    y = Fraction(y)
    if not I.contains_point(y):
        return False

    def digit(q):
        return int(y * (1 << q)) & 1

    for e in ds.exps[:-1]:
        want = 0 if signs[e] > 0 else 1
        if digit(e + 1) ^ digit(e + 2) != want:
            return False
    e = ds.exps[-1]
    pattern = (0, 0) if signs[e] > 0 else (1, 0)
    return (digit(e + 1), digit(e + 2)) == pattern


# --- U-sets at resolvable frequencies ------------------------------------------

def u_set(I: DyadicInterval, a: int, s: int, resolution: int) -> MeasurableSet:
    """Cells of I where cos(2 pi a x) has sign s at the cell center (zeros count as +1)."""
    if a * 4 > (1 << resolution):
        raise ValueError("half-period of a is not resolved at this resolution")
    if I.scale > resolution:
        raise ValueError("interval finer than resolution")
    k = resolution - I.scale
    cells = np.arange(I.index << k, (I.index + 1) << k)
    # cos(2 pi a (c + 1/2)/2^R) via the exact phase (a (2c + 1)) mod 2^(R+1)
    phase = (a * (2 * cells + 1)) % (1 << (resolution + 1))
    quarter = 1 << (resolution - 1)
    pos = (phase <= quarter) | (phase >= 3 * quarter)
    keep = pos if s > 0 else ~pos
    return MeasurableSet(resolution, tuple(int(c) for c in cells[keep]))


# --- sign tables ------------------------------------------------------------------

@dataclass
class SignTable:
    """S[piece](a) for the pieces of one level; rows follow ``pieces``, columns ``exps``."""

    level: int
    pieces: list
    exps: tuple
    signs: np.ndarray  # int8, +1 / -1
    witnessed: np.ndarray  # bool, some tile's star meets the piece
    ambiguous: list = field(default_factory=list)
    conflicts: list = field(default_factory=list)

    def sign(self, piece: int, exp: int) -> int:
        return int(self.signs[piece, self.exps.index(exp)])

    @property
    def neg(self) -> np.ndarray:
        return self.signs < 0


def sign_table(cme, level: int, kernel=None, floor: float = 1e-12) -> SignTable:
    """Sign of sum over level tiles P with frequency a of int_I Phi_P, per piece I and frequency a.

    Phi_P is the demodulated adjoint T_P^*(1) e^(-2 pi i a y). With no witnessing
    tile, or a sum below ``floor`` times the sum of magnitudes, the sign is +1;
    the latter is recorded as ambiguous. Individual tiles that disagree in sign on
    the same piece and frequency are recorded as conflicts.
    """
    from .carleson import PieceGeometry, make_kernel, phi_integrals

    kernel = kernel or make_kernel()
    geo = PieceGeometry.from_cme(cme, level)
    codes = [cme.code_of[a] for a in cme.level_alphas(level)]
    exps = tuple(int(e) for e in cme.exponent(codes))
    col = {c: i for i, c in enumerate(codes)}
    rows = np.flatnonzero(cme.table.level == level)
    npc, nf = len(geo.pieces), len(codes)
    total = np.zeros(npc * nf)
    mag = np.zeros(npc * nf)
    smin = np.full(npc * nf, 2.0)
    smax = np.full(npc * nf, -2.0)
    colmap = np.zeros(cme.sentinel_code + 1, dtype=np.int64)
    for c, i in col.items():
        colmap[c] = i
    rcol = colmap[cme.table.code[rows]]
    for ti, piece_idx, vals in phi_integrals(cme, geo, rows, kernel):
        key = piece_idx * nf + rcol[ti]
        np.add.at(total, key, vals)
        np.add.at(mag, key, np.abs(vals))
        big = np.abs(vals) > 1e-300
        sg = np.sign(vals[big])
        np.minimum.at(smin, key[big], sg)
        np.maximum.at(smax, key[big], sg)
    witnessed = mag > 0
    amb = witnessed & (np.abs(total) <= floor * mag)
    signs = np.where(total < 0, -1, 1).astype(np.int8)
    signs[amb | ~witnessed] = 1
    conflicts = np.flatnonzero((smin < 0) & (smax > 0))
    return SignTable(
        level, geo.pieces, exps, signs.reshape(npc, nf), witnessed.reshape(npc, nf),
        ambiguous=[(int(k // nf), exps[k % nf]) for k in np.flatnonzero(amb)],
        conflicts=[(int(k // nf), exps[k % nf]) for k in conflicts],
    )


# --- F_j and the extremal function -------------------------------------------------

@dataclass
class FSet:
    """F_j: digit-window sets inside each piece of a level."""

    level: int
    digits: DigitSet
    pieces: list
    neg: np.ndarray  # bool [piece, window]

    @property
    def piece_length(self) -> Fraction:
        return self.pieces[0].length if self.pieces else Fraction(0)

    @property
    def measure(self) -> Fraction:
        return sum((I.length for I in self.pieces), Fraction(0)) * self.digits.density()

    def density_in(self, I: DyadicInterval) -> Fraction:
        """|I ∩ F| / |I| for a dyadic interval I no finer than the pieces."""
        got = sum((J.length for J in self.pieces if I.contains(J)), Fraction(0))
        return got * self.digits.density() / I.length

    def integrals(self, exps) -> np.ndarray:
        lengths = np.array([float(I.length) for I in self.pieces])
        return piece_integrals(self.digits, list(exps), self.neg, lengths)

    def contains(self, y) -> bool:
        for k, I in enumerate(self.pieces):
            if I.contains_point(y):
                signs = {e: (-1 if self.neg[k, w] else 1) for w, e in enumerate(self.digits.exps)}
                return member(self.digits, signs, I, y)
        return False


def build_F(cme, level: int, table: SignTable | None = None) -> FSet:
    table = table or sign_table(cme, level)
    ds = DigitSet(table.exps)
    if not table.pieces:
        raise ValueError("level has no pieces")
    finest_piece = max(I.scale for I in table.pieces)
    if ds.exps[0] <= finest_piece + 2:
        raise ValueError("digit windows must lie below the piece resolution")
    return FSet(level, ds, list(table.pieces), table.neg.copy())


@dataclass
class ExtremalFunction:
    sets: dict  # level -> FSet
    weights: dict  # level -> Fraction or float
    norms: dict = field(default_factory=dict)

    def parts(self) -> list:
        return [(self.weights[j], self.sets[j].measure) for j in sorted(self.sets)]

    @property
    def l1(self) -> Fraction:
        return sum((Fraction(w) * m for w, m in self.parts()), Fraction(0))


def _log2(m: Fraction) -> float:
    m = Fraction(m)
    return math.log2(m.numerator) - math.log2(m.denominator)


def _loglog4(m: Fraction) -> float:
    """loglog(4/m) with the clamp at 1, for tiny rational m."""
    return max(1.0, math.log2(2 - _log2(m)))


def lloglog_norm(parts, phi=None) -> float:
    """Lorentz norm of sum r_j chi_{F_j} with disjoint F_j; phi defaults to s loglog(4/s).

    Cumulative measures go through log2, so exact rationals of any size are fine.
    """
    phi = phi or mu()
    parts = sorted(((float(w), Fraction(m)) for w, m in parts if m > 0), key=lambda p: -p[0])
    total, prev, cum = 0.0, 0.0, Fraction(0)
    for w, m in parts:
        cum += m
        lg = _log2(cum)
        cur = 2.0 ** lg * float(phi.slowly(-lg))
        total += w * (cur - prev)
        prev = cur
    return total


def assemble(sets: dict, weights: dict | str = "normalized") -> ExtremalFunction:
    """f = sum r_j chi_{F_j}. Weight modes: a dict of positive weights, "normalized"
    (r_j = 1/(#levels |F_j| loglog(4/|F_j|)), then rescaled so the L loglog L norm is 1),
    or "decay" (r_j = 1/(|F_j| 2^j j))."""
    levels = sorted(sets)
    for a in levels:
        for b in levels:
            if a < b and set(sets[a].pieces) & set(sets[b].pieces):
                raise ValueError("F_j must be pairwise disjoint")
    if isinstance(weights, dict):
        w = {j: weights[j] for j in levels}
        if any(v <= 0 for v in w.values()):
            raise ValueError("weights must be positive")
    elif weights == "decay":
        w = {j: 1 / (float(sets[j].measure) * 2 ** j * j) for j in levels}
    elif weights == "normalized":
        w = {j: 1 / (len(levels) * float(sets[j].measure) * _loglog4(sets[j].measure)) for j in levels}
        n = lloglog_norm([(w[j], sets[j].measure) for j in levels])
        w = {j: v / n for j, v in w.items()}
    else:
        raise ValueError(f"unknown weight mode {weights!r}")
    f = ExtremalFunction(dict(sets), w)
    f.norms["L1"] = float(sum(float(w[j]) * float(sets[j].measure) for j in levels))
    f.norms["LloglogL"] = lloglog_norm(f.parts())
    return f


def extremal_function(cme, weights="normalized") -> ExtremalFunction:
    sets = {j: build_F(cme, j) for j in range(1, cme.profile.L + 1)}
    return assemble(sets, weights)


# --- general lacunary sequences -----------------------------------------------------

def thin_sequence(seq, sigma: int = 10) -> list:
    """Greedy subsequence with consecutive ratios above 2^sigma; rejects non-lacunary input."""
    seq = [int(n) for n in seq]
    if any(b <= a for a, b in zip(seq, seq[1:])):
        raise ValueError("sequence must be strictly increasing")
    ratios = [b / a for a, b in zip(seq, seq[1:]) if a > 0]
    if len(ratios) >= 2 and min(ratios[len(ratios) // 2:]) <= 1 + 1e-9:
        raise ValueError("sequence is not lacunary")
    if ratios and min(ratios) < 1.05:
        raise ValueError("sequence is not lacunary")
    out = [seq[0]]
    for n in seq[1:]:
        if n > out[-1] << sigma:
            out.append(n)
    return out


def general_u_fraction(a: int, I: DyadicInterval, s: int, resolution: int) -> Fraction:
    """|U(a) ∩ I| / |I| on the grid, for any integer frequency a."""
    return u_set(I, a, s, resolution).measure / I.length


def general_lacunary_mode(seq, sigma: int = 10, resolution: int | None = None, max_resolution: int = 26) -> dict:
    """U-sets and their intersections for a user sequence after thinning.

    Works at a resolution where every half period is resolved. Reports the
    fraction of each U-set (the band is 1/2 +- 2^(-sigma/2)) and the density of the
    running intersection against 2^-c within a factor e.
    """
    kept = thin_sequence(seq, sigma)
    top = kept[-1]
    R = resolution or top.bit_length() + 6
    if R < top.bit_length() + 2:
        raise ValueError("resolution does not resolve the largest half period")
    if R > max_resolution:
        raise ValueError(f"grid 2^{R} too large; shorten the sequence or raise max_resolution")
    I = DyadicInterval(0, 0)
    n = 1 << R
    x = (2 * np.arange(n, dtype=np.int64) + 1)
    inside = np.ones(n, dtype=bool)
    fractions, densities = [], []
    band = 2.0 ** (-sigma / 2)
    for c, a in enumerate(kept, start=1):
        phase = (a * x) % (1 << (R + 1))
        q = 1 << (R - 1)
        pos = (phase <= q) | (phase >= 3 * q)
        fractions.append(float(np.count_nonzero(pos)) / n)
        inside &= pos
        densities.append(float(np.count_nonzero(inside)) / n * 2 ** c)
    return {
        "kept": kept,
        "u_fraction": fractions,
        "u_in_band": all(abs(f - 0.5) <= band for f in fractions),
        "intersection_over_2^-c": densities,
        "in_e_band": all(1 / math.e <= d <= math.e for d in densities),
    }
