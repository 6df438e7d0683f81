"""Counting functions over mass bins and their level sets.

nu_bar_n = 2^-(n-1) sum over maximal bin-n tiles of chi_I. On CME outputs every
bin-n tile is maximal and each structure whose generation range contains n
contributes exactly chi of its tops, so nu_j (the mean of nu_bar over the level's
window) counts the level-j layer tops covering x, weighted by how much of the
window the structure's generations cover. That identity gives a tile-free route
used for large profiles; the tile route is kept for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dyadic import DyadicInterval, StepFunction
from .tiles import Classification


@dataclass
class Field:
    """Rational step function num / den at a resolution (num an integer array)."""

    resolution: int
    num: np.ndarray
    den: int

    def floats(self) -> np.ndarray:
        return self.num / self.den

    def step(self) -> StepFunction:
        return StepFunction(self.resolution, tuple(Fraction(int(v), self.den) for v in self.num))

    def refine(self, R: int) -> "Field":
        return Field(R, np.repeat(self.num, 1 << (R - self.resolution)), self.den)

    def geq(self, t) -> np.ndarray:
        t = Fraction(t)
        return self.num * t.denominator >= t.numerator * self.den

    def gt(self, t) -> np.ndarray:
        t = Fraction(t)
        return self.num * t.denominator > t.numerator * self.den

    def l1(self) -> Fraction:
        return Fraction(int(np.abs(self.num).sum()), self.den << self.resolution)

    def weak(self) -> Fraction:
        a = np.sort(np.abs(self.num))[::-1]
        if not len(a) or a[0] == 0:
            return Fraction(0)
        best = int(np.max(a * np.arange(1, len(a) + 1)))
        return Fraction(best, self.den << self.resolution)


def _common(fields: list) -> list:
    R = max(f.resolution for f in fields)
    den = math.lcm(*(f.den for f in fields))
    return [Field(R, np.repeat(f.num, 1 << (R - f.resolution)) * (den // f.den), den) for f in fields]


def cell_max(fields: list) -> Field:
    fs = _common(fields)
    return Field(fs[0].resolution, np.max(np.stack([f.num for f in fs]), axis=0), fs[0].den)


def _cover(R: int, intervals) -> np.ndarray:
    """Multiplicity of coverage by dyadic intervals, per cell of resolution R."""
    d = np.zeros((1 << R) + 1, dtype=np.int64)
    for I in intervals:
        k = R - I.scale
        d[I.index << k] += 1
        d[(I.index + 1) << k] -= 1
    return np.cumsum(d[:-1])


# --- tile route ---------------------------------------------------------------

def nu_bar(n: int, cls: Classification, resolution: int | None = None) -> Field:
    tiles = cls.maximal.get(n, [])
    R = resolution if resolution is not None else max([p.time.scale for p in tiles], default=0)
    return Field(R, _cover(R, [p.time for p in tiles]), 1 << (n - 1) if n >= 1 else 1)


def nu_window(window, cls: Classification, resolution: int) -> Field:
    lo, hi = window
    parts = [nu_bar(n, cls, resolution) for n in range(lo, hi + 1)]
    fs = _common(parts)
    return Field(resolution, sum(f.num for f in fs), fs[0].den * (hi - lo + 1))


# --- CME routes ----------------------------------------------------------------

def nu_bar_cme(cme, n: int, resolution: int | None = None) -> Field:
    """From the tile table: bin-n tiles, after checking they are pairwise non-nested per frequency."""
    t = cme.table
    R = resolution or cme.resolution
    rows = np.flatnonzero(t.gen == n)
    sc = t.scale[rows].astype(np.int64)
    idx = t.index[rows].astype(np.int64)
    _check_maximal(t.code[rows].astype(np.int64), sc, idx)
    d = np.zeros((1 << R) + 1, dtype=np.int64)
    np.add.at(d, idx << (R - sc), 1)
    np.add.at(d, (idx + 1) << (R - sc), -1)
    return Field(R, np.cumsum(d[:-1]), 1 << (n - 1))


def _check_maximal(code, sc, idx):
    keys = (code << 48) | (sc << 42) | idx
    skeys = np.sort(keys)
    if len(skeys) and np.any(skeys[1:] == skeys[:-1]):
        raise ValueError("duplicate tiles in a mass bin")
    for d in range(1, int(sc.max(initial=0)) + 1):
        ok = sc >= d
        anc = (code << 48) | ((sc - d) << 42) | (idx >> d)
        k = np.minimum(np.searchsorted(skeys, anc), max(len(skeys) - 1, 0))
        if np.any(ok & (skeys[k] == anc)):
            raise ValueError("nested same-frequency tiles in one mass bin: not all maximal")


def nu_j(cme, j: int, resolution: int | None = None) -> Field:
    """Mean of nu_bar over the level's generation window, from tiles."""
    r, n = cme.profile.gen(j)
    R = resolution or cme.resolution
    parts = [nu_bar_cme(cme, m, R) for m in range(r, n + 1)]
    fs = _common(parts)
    return Field(R, sum(f.num for f in fs), fs[0].den * (n - r + 1))


def top_table(cme) -> dict:
    """One row per structure top: level, layer, generation range and the dyadic interval."""
    cols = {k: [] for k in ("level", "layer", "r", "n", "scale", "index")}
    for pl in cme.placements:
        p = pl.params
        for I in p.tops:
            cols["level"].append(pl.level)
            cols["layer"].append(pl.layer)
            cols["r"].append(p.r)
            cols["n"].append(p.n)
            cols["scale"].append(I.scale)
            cols["index"].append(I.index)
    return {k: np.asarray(v, dtype=np.int64) for k, v in cols.items()}


def _weighted_cover(R: int, scale, index, weight) -> np.ndarray:
    d = np.zeros((1 << R) + 1, dtype=np.int64)
    np.add.at(d, index << (R - scale), weight)
    np.add.at(d, (index + 1) << (R - scale), -weight)
    return np.cumsum(d[:-1])


def nu_j_structural(cme, j: int, resolution: int | None = None, tops: dict | None = None) -> Field:
    """The same function from structure tops alone (no tile table)."""
    r, n = cme.profile.gen(j)
    tt = tops or top_table(cme)
    R = resolution or int(tt["scale"].max())
    sel = tt["level"] == j
    w = np.maximum(0, np.minimum(tt["n"][sel], n) - np.maximum(tt["r"][sel], r) + 1)
    return Field(R, _weighted_cover(R, tt["scale"][sel], tt["index"][sel], w), n - r + 1)


def _structure_resolution(cme) -> int:
    return max(I.scale for pl in cme.placements for I in pl.params.tops)


def nu_grand(cme, k: int | None = None, structural: bool = False, resolution: int | None = None) -> Field:
    """sup over levels j <= k of nu_j (all levels by default)."""
    k = cme.profile.L if k is None else k
    R = resolution or (_structure_resolution(cme) if structural else cme.resolution)
    if structural:
        tt = top_table(cme)
        return cell_max([nu_j_structural(cme, j, R, tt) for j in range(1, k + 1)])
    return cell_max([nu_j(cme, j, R) for j in range(1, k + 1)])


# --- BMO ------------------------------------------------------------------------

def dyadic_bmo(values: np.ndarray) -> float:
    """sup over dyadic I of the mean of |f - f_I| on I (numeric, vectorized)."""
    v = np.asarray(values, dtype=float)
    n = len(v)
    best = 0.0
    w = n
    while w >= 2:
        blocks = v.reshape(-1, w)
        m = blocks.mean(axis=1, keepdims=True)
        best = max(best, float(np.abs(blocks - m).mean(axis=1).max()))
        w //= 2
    return best


# --- level sets ---------------------------------------------------------------------

def maximal_dyadic_arrays(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Maximal dyadic intervals inside a union of cells, as (scale, index) arrays sorted by left end."""
    R = int(len(mask)).bit_length() - 1
    full = [np.asarray(mask, dtype=bool)]
    for _ in range(R):
        prev = full[-1]
        full.append(prev[0::2] & prev[1::2])
    sc, ix, left = [], [], []
    for k in range(R + 1):
        here = full[k]
        top = here if k == R else here & ~np.repeat(full[k + 1], 2)
        i = np.flatnonzero(top)
        sc.append(np.full(len(i), R - k, dtype=np.int64))
        ix.append(i.astype(np.int64))
        left.append(i.astype(np.int64) << k)
    sc, ix, left = np.concatenate(sc), np.concatenate(ix), np.concatenate(left)
    o = np.argsort(left, kind="stable")
    return sc[o], ix[o]


def maximal_dyadic(mask: np.ndarray) -> list:
    sc, ix = maximal_dyadic_arrays(mask)
    return [DyadicInterval(int(a), int(b)) for a, b in zip(sc, ix)]


@dataclass
class LevelSetTree:
    """C_j^l = {nu_j >= l} as cell masks and their maximal dyadic components."""

    resolution: int
    masks: dict  # (j, l) -> bool array
    components: dict  # (j, l) -> (scale array, index array)

    def measure(self, j: int, l: int) -> Fraction:
        return Fraction(int(self.masks[(j, l)].sum()), 1 << self.resolution)

    def intervals(self, j: int, l: int) -> list:
        sc, ix = self.components[(j, l)]
        return [DyadicInterval(int(a), int(b)) for a, b in zip(sc, ix)]

    def count(self) -> int:
        return sum(len(sc) for sc, _ in self.components.values())

    def cells(self, key) -> tuple[np.ndarray, np.ndarray]:
        """Components as half-open cell ranges [lo, hi)."""
        sc, ix = self.components[key]
        k = self.resolution - sc
        return ix << k, (ix + 1) << k


def level_sets(fields: dict, levels_max: int) -> LevelSetTree:
    R = max(f.resolution for f in fields.values())
    masks, comps = {}, {}
    for j, f in fields.items():
        f = f.refine(R) if f.resolution < R else f
        for l in range(1, levels_max + 1):
            m = f.geq(l)
            masks[(j, l)] = m
            comps[(j, l)] = maximal_dyadic_arrays(m)
    return LevelSetTree(R, masks, comps)


@dataclass
class NestingVerdict:
    nesting_ok: bool
    jn_ok: bool
    pairs: int
    jn_constant: float  # max of 2^l2 |A[j2,l2]| / |A|, to be compared with 2^10
    failures: list

    @property
    def ok(self) -> bool:
        return self.nesting_ok and self.jn_ok


def _prefix(mask: np.ndarray) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(mask, dtype=np.int64)])


def nesting_check(tree: LevelSetTree, max_failures: int = 20) -> NestingVerdict:
    """For j1 > j2 every component of C_j2^l2 lies in one of C_j1^l1 or misses it, and
    |A[j2, l2]| < 2^(10 - l2) |A| for every component A of C_j1^l1 and j2 <= j1, where
    A[j2, l2] is the union of the components of C_j2^l2 contained in A."""
    keys = sorted(tree.components)
    failures, pairs = [], 0
    nest = jn = True
    const = 0.0
    for k1 in keys:
        j1, l1 = k1
        lo1, hi1 = tree.cells(k1)
        if not len(lo1):
            continue
        pre1 = _prefix(tree.masks[k1])
        for k2 in keys:
            j2, l2 = k2
            if j2 > j1 or k1 == k2:
                continue
            lo2, hi2 = tree.cells(k2)
            pairs += len(lo1) * len(lo2)
            if j1 > j2 and len(lo2):
                inside = pre1[hi2] - pre1[lo2]
                bad = (inside != 0) & (inside != hi2 - lo2)
                if bad.any():
                    nest = False
                    for b in np.flatnonzero(bad)[: max_failures - len(failures)]:
                        failures.append(("nesting", k1, k2, (int(lo2[b]), int(hi2[b]))))
            # components of k2 contained in each A: those starting inside A, minus one
            # that starts at A's left end while strictly containing A
            csum = np.concatenate([[0], np.cumsum(hi2 - lo2)])
            a = np.searchsorted(lo2, lo1)
            b = np.searchsorted(lo2, hi1)
            tot = csum[b] - csum[a]
            starts = (a < len(lo2)) & (a < b)
            ai = np.minimum(a, max(len(lo2) - 1, 0))
            if len(lo2):
                over = starts & (lo2[ai] == lo1) & (hi2[ai] > hi1)
                tot = tot - np.where(over, hi2[ai] - lo2[ai], 0)
            size = hi1 - lo1
            const = max(const, float(np.max(tot / size)) * 2.0 ** l2)
            if l2 <= 10:
                bad = ~(tot < (size << (10 - l2)))
            else:
                bad = ~((tot << (l2 - 10)) < size)
            if bad.any():
                jn = False
                for b_ in np.flatnonzero(bad)[: max_failures - len(failures)]:
                    failures.append(("john-nirenberg", k1, k2, (int(lo1[b_]), int(hi1[b_]))))
    return NestingVerdict(nest, jn, pairs, const, failures)


def top_witness(tree: LevelSetTree, cme, tops: dict | None = None) -> dict:
    """Is every component of C_j^l a single level-j top (strict), or at least a union of
    layer-l level-j tops (relaxed: adjacent tops may merge into a larger dyadic interval)?"""
    tt = tops or top_table(cme)
    R = tree.resolution
    strict_bad = relaxed_bad = total = 0
    examples = []
    for (j, l), (sc, ix) in sorted(tree.components.items()):
        sel = tt["level"] == j
        keys = (tt["scale"][sel] << 40) | tt["index"][sel]
        mine = (sc << 40) | ix
        hit = np.isin(mine, keys)
        lay = sel & (tt["layer"] == l)
        cov = _weighted_cover(R, tt["scale"][lay], tt["index"][lay], np.ones(int(lay.sum()), dtype=np.int64)) > 0
        pre = _prefix(cov)
        lo, hi = tree.cells((j, l))
        full = (pre[hi] - pre[lo]) == hi - lo
        total += len(sc)
        strict_bad += int((~hit).sum())
        relaxed_bad += int((~full).sum())
        for q in np.flatnonzero(~hit)[: max(0, 10 - len(examples))]:
            examples.append((j, l, str(DyadicInterval(int(sc[q]), int(ix[q])))))
    return {"components": total, "not_a_top": strict_bad, "not_tiled_by_tops": relaxed_bad,
            "examples": examples}


def basis_sandwich(cme, j: int, f: Field, tops: dict | None = None) -> dict:
    """{nu_j >= h} inside the union of deepest-layer tops, which lies inside {nu_j > h/2}."""
    h = cme.profile.h
    tt = tops or top_table(cme)
    R = f.resolution
    sel = (tt["level"] == j) & (tt["layer"] == h)
    basis = _weighted_cover(R, tt["scale"][sel], tt["index"][sel], np.ones(int(sel.sum()), dtype=np.int64)) > 0
    lower = f.geq(h)
    upper = f.gt(Fraction(h, 2))
    return {"lower": bool(np.all(~lower | basis)), "upper": bool(np.all(~basis | upper)),
            "basis_measure": Fraction(int(basis.sum()), 1 << R)}


def jn_fit(f: Field, gammas=None) -> dict:
    """|{nu > gamma}| on a grid; monotone decay and a fitted exponential rate."""
    v = f.floats()
    top = float(v.max()) if len(v) else 0.0
    gammas = list(gammas) if gammas is not None else [float(g) for g in np.linspace(0, top, 17)[:-1]]
    meas = [float(np.mean(v > g)) for g in gammas]
    mono = all(b <= a for a, b in zip(meas, meas[1:]))
    pos = [(g, m) for g, m in zip(gammas, meas) if m > 0]
    c = None
    if len(pos) >= 2 and len({g for g, _ in pos}) >= 2:
        g, m = np.array(pos).T
        c = float(-np.polyfit(g, np.log(m), 1)[0])
    return {"gammas": gammas, "measures": meas, "monotone": mono, "rate": c}


def superlevel_report(cme, threshold: int | None = None, tops: dict | None = None) -> dict:
    """|{nu_bar_m >= threshold}| per generation m, and whether these sets are disjoint across levels."""
    h = cme.profile.h if threshold is None else threshold
    tt = tops or top_table(cme)
    R = int(tt["scale"].max())
    meas, union = {}, {}
    for j in range(1, cme.profile.L + 1):
        r, n = cme.profile.gen(j)
        u = np.zeros(1 << R, dtype=bool)
        sel_j = tt["level"] == j
        for m in range(r, n + 1):
            sel = sel_j & (tt["r"] <= m) & (tt["n"] >= m)
            s = _weighted_cover(R, tt["scale"][sel], tt["index"][sel], np.ones(int(sel.sum()), dtype=np.int64)) >= h
            meas[f"{j}:{m}"] = Fraction(int(s.sum()), 1 << R)
            u |= s
        union[j] = u
    clash = [(a, b) for a in union for b in union if a < b and np.any(union[a] & union[b])]
    return {"measures": meas, "disjoint_across_levels": not clash, "clashes": clash}


# --- extremality ------------------------------------------------------------------

def matched_profile(h: int):
    from .cme import ScaleProfile

    s = max(1, math.ceil(math.log2(h)))
    L = max(1, 1 << (h - 2)) if h >= 2 else 1
    return ScaleProfile(L=L, h=h, s=s, widths=(1,) * L)


def extremality_experiment(profiles=None) -> list:
    """||nu||_1, ||nu||_{1,inf} and their ratio to h, from structure tops."""
    from .cme import build_structure

    profiles = profiles or [matched_profile(h) for h in (2, 3, 4)]
    rows = []
    for prof in profiles:
        cme = build_structure(prof)
        nu = nu_grand(cme, structural=True)
        weak, l1 = nu.weak(), nu.l1()
        rows.append({
            "profile": prof.to_json(), "h": prof.h, "L": prof.L,
            "nu_l1": float(l1), "nu_weak": float(weak), "weak_le_l1": weak <= l1,
            "ratio": float(weak) / prof.h,
        })
    return rows
