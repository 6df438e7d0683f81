"""Cantor multi-tower embedding: a chain of multi-towers, one per level, and the N realizing it.

Level L is the coarsest: a single tower whose first layer sits on [0, 1). Every
other level is hosted inside the left halves of the bottoms of the next coarser
level, with frequencies drawn from the host bottom's block, so that the finer
structures supply exactly the E-set measure the host tiles ask for.

Tiles are kept in a numpy table (scale, index, frequency code, level, layer,
structure, generation). ``Tile`` objects are built on demand.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

from .dyadic import DyadicInterval, RealInterval, pow2, star, subintervals
from .structures import (
    MultiTower, Tower, Usgtf, UsgtfParams, build_usgtf, embeds, keycompress_check,
    multitower_check, params_from_tiles, prec, tower_check,
)
from .tiles import Linearization, Tile


class CmeInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class ScaleProfile:
    """Levels L, tower height h, subdivision depth s and per-level generation widths.

    Generations are derived: r_1 = r1, n_j = r_j + widths[j-1], r_{j+1} = n_j + s.
    The terminal pair of the finest level uses generation (g0, n_1); coarser
    levels use r_j for the pair so that hosted children stay balanced.
    """

    L: int = 2
    h: int = 2
    s: int = 1
    widths: tuple = ()
    r1: int = 1
    g0: int | None = None
    sigma: int = 10
    guard: int = 40
    N0: int = 10

    def __post_init__(self):
        if self.L < 1 or self.h < 1 or self.s < 0:
            raise CmeInfeasible("need L >= 1, h >= 1, s >= 0")
        if (1 << self.s) < self.h:
            raise CmeInfeasible(f"subdivision infeasible: 2^s = {1 << self.s} < h = {self.h}")
        w = tuple(self.widths) or (1,) * self.L
        if len(w) != self.L or min(w) < 1:
            raise CmeInfeasible("need one width >= 1 per level")
        object.__setattr__(self, "widths", w)
        if self.r1 < 1:
            raise CmeInfeasible("r1 must be at least 1")
        if self.g0 is not None and not 1 <= self.g0 <= self.r1:
            raise CmeInfeasible("g0 must lie in [1, r1]")
        if self.sigma < 10:
            raise CmeInfeasible("sigma must be at least 10")

    def gen(self, j: int) -> tuple[int, int]:
        r = self.r1
        for i in range(1, j):
            r += self.widths[i - 1] + self.s
        return r, r + self.widths[j - 1]

    def floor(self, j: int) -> int:
        return self.g0 if j == 1 and self.g0 is not None else self.gen(j)[0]

    @property
    def host_layers(self) -> tuple:
        """Layers whose left bottom halves host the next finer level."""
        if self.h >= 3:
            return tuple(range(1, self.h - 1))
        return (1,)

    def to_json(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ScaleProfile":
        d = dict(d)
        d["widths"] = tuple(d.get("widths", ()))
        return cls(**d)


@dataclass(frozen=True)
class Placement:
    """One USGTF of the embedding."""

    level: int
    tower: int
    layer: int
    params: UsgtfParams
    terminal: bool
    host: int | None = None  # index of the host structure, None at the top level


def _tower(base: DyadicInterval, blocks, r: int, n: int, g: int, sigma: int) -> list:
    h = len(blocks)
    layers = []
    tops = (base,)
    for l in range(h):
        if h >= 2 and l >= h - 2:
            layers.append(UsgtfParams(tops, blocks[l], g, n, sigma))
            continue
        p = UsgtfParams(tops, blocks[l], r, n, sigma)
        layers.append(p)
        tops = tuple(DyadicInterval(J.scale + 1, 2 * J.index + 1) for J in p.bottoms)
    return layers


def build_top_tower(profile: ScaleProfile, alphas) -> list:
    """Layer parameters of the level-L tower; `alphas` holds h 2^(n_L - 1) frequencies."""
    r, n = profile.gen(profile.L)
    size = 1 << (n - 1)
    if len(alphas) != profile.h * size:
        raise ValueError("wrong number of top-level frequencies")
    blocks = [tuple(alphas[l * size:(l + 1) * size]) for l in range(profile.h)]
    return _tower(DyadicInterval(0, 0), blocks, r, n, profile.floor(profile.L), profile.sigma)


def _bottom_blocks(p: UsgtfParams):
    """(bottom interval, frequency block) for every bottom of p."""
    per_top = 1 << p.depth
    for top in p.tops:
        for pos in range(per_top):
            J = DyadicInterval(top.scale + p.depth, (top.index << p.depth) + pos)
            yield J, p.block(pos)


def build_level(j: int, hosts: list, profile: ScaleProfile) -> list:
    """Towers of level j inside each host bottom: h towers on the first h of 2^s left-half subdivisions.

    Tower r, layer l takes sub-block (r + l) mod h of the host bottom's frequency
    block, so for each layer the h towers partition the used sub-blocks.
    Returns a list of (host index, list of layer params).
    """
    r, n = profile.gen(j)
    g = profile.floor(j)
    h, s = profile.h, profile.s
    size = 1 << (n - 1)
    out = []
    for hi, hp in hosts:
        if hp.r - n != s:
            raise CmeInfeasible("host generation does not leave room for the child generation")
        for J, block in _bottom_blocks(hp):
            subs = [block[b * size:(b + 1) * size] for b in range(1 << s)]
            left = DyadicInterval(J.scale + 1, 2 * J.index)
            bases = subintervals(left, s)
            for t in range(h):
                blocks = [subs[(t + l) % h] for l in range(h)]
                out.append((hi, _tower(bases[t], blocks, r, n, g, profile.sigma)))
    return out


# --- tile table --------------------------------------------------------------

@dataclass
class TileTable:
    scale: np.ndarray
    index: np.ndarray
    code: np.ndarray
    level: np.ndarray
    layer: np.ndarray
    struct: np.ndarray
    gen: np.ndarray

    def __len__(self) -> int:
        return len(self.scale)

    @staticmethod
    def concat(parts: list) -> "TileTable":
        return TileTable(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                           ("scale", "index", "code", "level", "layer", "struct", "gen")))

    def keys(self) -> np.ndarray:
        """(code, scale, index) packed into one int64."""
        return (self.code.astype(np.int64) << 48) | (self.scale.astype(np.int64) << 42) | self.index


def _structure_table(sid: int, pl: Placement, code_of: dict) -> TileTable:
    p = pl.params
    tops = np.array([I.index for I in p.tops], dtype=np.int64)
    t_scale = p.tops[0].scale
    u = np.arange(len(p.alphas), dtype=np.int64)
    b = u >> (p.r - 1)
    codes = np.array([code_of[a] for a in p.alphas], dtype=np.int32)
    ms = np.arange(p.r, p.n + 1, dtype=np.int64)
    T, U, M = np.meshgrid(np.arange(len(tops)), u, ms, indexing="ij")
    up = p.n - M
    index = (tops[T] << up) + (b[U] >> (M - p.r))
    cnt = index.size
    return TileTable(
        scale=(t_scale + up).ravel().astype(np.int16),
        index=index.ravel(),
        code=codes[U].ravel(),
        level=np.full(cnt, pl.level, dtype=np.int16),
        layer=np.full(cnt, pl.layer, dtype=np.int16),
        struct=np.full(cnt, sid, dtype=np.int32),
        gen=M.ravel().astype(np.int16),
    )


# --- the embedding -------------------------------------------------------------

@dataclass
class Cme:
    profile: ScaleProfile
    placements: list
    alphas: tuple
    p0: int
    resolution: int
    codes: np.ndarray | None = None
    log: dict = field(default_factory=dict)

    @property
    def sentinel(self) -> int:
        return 1 << (self.p0 + self.profile.sigma * len(self.alphas))

    @property
    def sentinel_code(self) -> int:
        return len(self.alphas)

    @cached_property
    def code_of(self) -> dict:
        return {a: i for i, a in enumerate(self.alphas)}

    def exponent(self, code) -> np.ndarray:
        """log2 of the frequency with the given code."""
        return self.p0 + self.profile.sigma * np.asarray(code)

    @cached_property
    def table(self) -> TileTable:
        return TileTable.concat([_structure_table(i, pl, self.code_of) for i, pl in enumerate(self.placements)])

    def structures(self, level: int | None = None, layer: int | None = None) -> list:
        return [i for i, pl in enumerate(self.placements)
                if (level is None or pl.level == level) and (layer is None or pl.layer == layer)]

    def towers(self, level: int) -> dict:
        out = {}
        for i, pl in enumerate(self.placements):
            if pl.level == level:
                out.setdefault(pl.tower, []).append(i)
        return out

    @cached_property
    def _usgtf_cache(self) -> dict:
        return {}

    def usgtf(self, sid: int) -> Usgtf:
        if sid not in self._usgtf_cache:
            self._usgtf_cache[sid] = build_usgtf(self.placements[sid].params)
        return self._usgtf_cache[sid]

    def tower(self, level: int, t: int) -> Tower:
        return Tower([self.usgtf(i) for i in sorted(self.towers(level)[t], key=lambda i: self.placements[i].layer)])

    def multitower(self, level: int) -> MultiTower:
        return MultiTower([self.tower(level, t) for t in sorted(self.towers(level))])

    def tile(self, i: int) -> Tile:
        t = self.table
        return Tile.at(DyadicInterval(int(t.scale[i]), int(t.index[i])), self.alphas[int(t.code[i])])

    def tiles(self, rows=None) -> list:
        rows = range(len(self.table)) if rows is None else rows
        return [self.tile(int(i)) for i in rows]

    @cached_property
    def linearization(self) -> Linearization:
        if self.codes is None:
            raise ValueError("N has not been derived")
        universe = self.alphas + (self.sentinel,)
        return Linearization.from_codes(self.resolution, self.codes, universe, self.profile.sigma)

    def terminal_bottoms(self, level: int) -> list:
        """Bottoms of the deepest layer at this level, in order."""
        out = []
        for i in self.structures(level, self.profile.h):
            out.extend(self.placements[i].params.bottoms)
        return sorted(out)

    def pieces(self, level: int) -> list:
        """Right halves of the deepest-layer bottoms: the region that carries F at this level."""
        return [DyadicInterval(J.scale + 1, 2 * J.index + 1) for J in self.terminal_bottoms(level)]

    def level_alphas(self, level: int) -> tuple:
        return tuple(sorted({a for i in self.structures(level) for a in self.placements[i].params.alphas}))

    def manifest(self) -> str:
        """Deterministic JSON: profile, structure parameters and run-length encoded N."""
        runs = []
        if self.codes is not None:
            change = np.flatnonzero(np.diff(self.codes)) + 1
            starts = np.concatenate([[0], change])
            lengths = np.diff(np.concatenate([starts, [len(self.codes)]]))
            runs = [[int(self.codes[s]), int(n)] for s, n in zip(starts, lengths)]
        d = {
            "profile": self.profile.to_json(),
            "p0": self.p0,
            "resolution": self.resolution,
            "frequency_exponents": [self.p0 + self.profile.sigma * m for m in range(len(self.alphas))],
            "structures": [
                {"level": pl.level, "tower": pl.tower, "layer": pl.layer, "terminal": pl.terminal,
                 "host": pl.host, "generation": [pl.params.r, pl.params.n],
                 "tops": [[I.scale, I.index] for I in pl.params.tops],
                 "alpha_codes": [self.code_of[a] for a in pl.params.alphas]}
                for pl in self.placements
            ],
            "N_runs": runs,
            "log": self.log,
        }
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.manifest().encode()).hexdigest()


def build_structure(profile: ScaleProfile) -> Cme:
    """All placements and frequencies, without N."""
    h = profile.h
    rL, nL = profile.gen(profile.L)
    M = h << (nL - 1)
    placements: list[Placement] = []
    # geometry does not depend on the frequency values: build with 2^(sigma m), remap once R is known
    codes = [1 << (profile.sigma * m) for m in range(M)]
    layers = build_top_tower(profile, codes)
    for l, p in enumerate(layers, start=1):
        placements.append(Placement(profile.L, 0, l, p, h >= 2 and l >= h - 1 or h == 1))
    for j in range(profile.L - 1, 0, -1):
        hosts = [(i, pl.params) for i, pl in enumerate(placements)
                 if pl.level == j + 1 and pl.layer in profile.host_layers]
        for t, (hi, tl) in enumerate(build_level(j, hosts, profile)):
            for l, p in enumerate(tl, start=1):
                placements.append(Placement(j, t, l, p, h >= 2 and l >= h - 1 or h == 1, hi))
    finest = max(pl.params.tops[0].scale + pl.params.depth for pl in placements)
    R = max(pl.params.tops[0].scale + pl.params.depth + max(pl.params.r, 1) for pl in placements)
    p0 = R + profile.guard
    alphas = tuple(1 << (p0 + profile.sigma * m) for m in range(M))
    real = []
    for pl in placements:
        p = pl.params
        real.append(Placement(pl.level, pl.tower, pl.layer,
                              UsgtfParams(p.tops, tuple(alphas[(c.bit_length() - 1) // profile.sigma] for c in p.alphas),
                                          p.r, p.n, profile.sigma),
                              pl.terminal, pl.host))
    cme = Cme(profile, real, alphas, p0, R)
    cme.log["finest_bottom_scale"] = finest
    return cme


def derive_linearization(cme: Cme) -> np.ndarray:
    """Allot cells to E-set targets, finest level first and deepest bottoms first.

    Each target (bottom J, frequency a, r) asks for 2^-r |J| of a-cells in J.
    Cells already carrying a (supplied by hosted finer structures) count; the
    deficit is filled leftmost-first from unassigned cells of J that are not
    inside the tops of a finer level.
    """
    R = cme.resolution
    sent = cme.sentinel_code
    codes = np.full(1 << R, sent, dtype=np.int32)
    reserved = np.zeros(1 << R, dtype=bool)
    for j in range(1, cme.profile.L + 1):
        groups = []
        for i in cme.structures(j):
            p = cme.placements[i].params
            for J, block in _bottom_blocks(p):
                groups.append((J, p.r, [cme.code_of[a] for a in block]))
        groups.sort(key=lambda g: (-g[0].scale, g[0].index))
        for J, r, block in groups:
            lo = J.index << (R - J.scale)
            hi = (J.index + 1) << (R - J.scale)
            need = (hi - lo) >> r
            seg = codes[lo:hi]
            free = np.flatnonzero((seg == sent) & ~reserved[lo:hi])
            used = 0
            for c in sorted(block):
                have = int(np.count_nonzero(seg == c))
                deficit = need - have
                if deficit < 0:
                    raise CmeInfeasible(f"over-subscribed frequency code {c} in {J}")
                if used + deficit > len(free):
                    raise CmeInfeasible(f"not enough free cells in {J} for frequency code {c}")
                seg[free[used:used + deficit]] = c
                used += deficit
        for i in cme.structures(j):
            for I in cme.placements[i].params.tops:
                reserved[I.index << (R - I.scale):(I.index + 1) << (R - I.scale)] = True
    cme.codes = codes
    return codes


def build_cme(profile: ScaleProfile) -> Cme:
    cme = build_structure(profile)
    derive_linearization(cme)
    return cme


# --- masses ------------------------------------------------------------------

def restricted_masses(cme: Cme) -> np.ndarray:
    """Exact |E(P)|/|I_P| numerators: count of matching cells and the cell count of I_P."""
    R = cme.resolution
    t = cme.table
    pos = np.argsort(cme.codes, kind="stable")
    keyed = (cme.codes[pos].astype(np.int64) << R) + pos
    lo = t.index.astype(np.int64) << (R - t.scale.astype(np.int64))
    hi = (t.index.astype(np.int64) + 1) << (R - t.scale.astype(np.int64))
    base = t.code.astype(np.int64) << R
    return np.searchsorted(keyed, base + hi) - np.searchsorted(keyed, base + lo)


def mass_report(cme: Cme) -> dict:
    """Masses of every tile, with the cross-frequency damping certified negligible.

    Tiles with different frequencies are never ordered and their damping factor
    is bounded by the closest pair of frequency intervals; the bound is compared
    against the smallest positive restricted mass. Same-frequency ancestors are
    compared exactly.
    """
    t = cme.table
    R = cme.resolution
    counts = restricted_masses(cme)
    cells = np.left_shift(np.int64(1), (R - t.scale.astype(np.int64)))
    declared = np.left_shift(np.int64(1), (R - t.scale.astype(np.int64) - t.gen.astype(np.int64)))
    exact = bool(np.all(counts == declared))
    # same-frequency ancestors: A0 as exponent of two when exact
    keys = t.keys()
    order = np.argsort(keys)
    skeys = keys[order]
    a0_log = np.where(counts == declared, -t.gen.astype(np.int64), 1)  # 1 flags a mismatch
    best = a0_log.copy()
    for d in range(1, int(t.scale.max()) + 1):
        ok = t.scale >= d
        anc = (t.code.astype(np.int64) << 48) | ((t.scale.astype(np.int64) - d) << 42) | (t.index >> d)
        k = np.searchsorted(skeys, anc)
        k = np.minimum(k, len(skeys) - 1)
        hit = ok & (skeys[k] == anc)
        cand = np.where(hit, a0_log[order[k]], -10**9)
        best = np.maximum(best, cand)
    dominated = int(np.count_nonzero(best > a0_log))
    # cross-frequency damping: (1 + dist/W)^-N0 <= 2^-(N0 * log2(dist/W)) with W the widest frequency interval
    logW = int(t.scale.max())
    gaps = [b - a for a, b in zip(cme.alphas, cme.alphas[1:] + (cme.sentinel,))]
    dist = min(gaps) - (10 << logW)
    log2_bound = -cme.profile.N0 * (dist.bit_length() - 1 - logW) if dist > 0 else 0
    certified = log2_bound < -(int(t.gen.max()) + 20)
    return {
        "tiles": len(t),
        "restricted_mass_exact": exact,
        "mismatches": int(np.count_nonzero(counts != declared)),
        "dominated_by_same_frequency_ancestor": dominated,
        "cross_frequency_log2_bound": log2_bound,
        "cross_frequency_certified": bool(certified),
        "max_mass_excess_bound": "1 + 2^-20" if certified else "uncertified",
        "bins_match_generation": exact and dominated == 0 and bool(certified),
    }


def tile_masses(cme: Cme) -> np.ndarray:
    """Mass exponent n (mass 2^-n) of every tile; valid when mass_report certifies the bins."""
    return cme.table.gen.astype(np.int64)


# --- normal / boundary ----------------------------------------------------------

def _merged_tops(p: UsgtfParams) -> list:
    spans = []
    for I in p.tops:
        if spans and spans[-1][1] == I.left:
            spans[-1][1] = I.right
        else:
            spans.append([I.left, I.right])
    return [RealInterval(a, b) for a, b in spans]


def normal_mask(cme: Cme) -> np.ndarray:
    """True where the tile's star lies inside the closed union of its structure's tops."""
    t = cme.table
    out = np.zeros(len(t), dtype=bool)
    for sid, pl in enumerate(cme.placements):
        rows = np.flatnonzero(t.struct == sid)
        if not len(rows):
            continue
        spans = _merged_tops(pl.params)
        lo = np.array([float(s.lo) for s in spans])
        hi = np.array([float(s.hi) for s in spans])
        sc = t.scale[rows].astype(np.int64)
        # work in units of the finest cell of this structure so everything is an exact integer
        unit = int(sc.max())
        L = np.left_shift(np.int64(1), unit - sc)
        left = t.index[rows] * L
        c2 = 2 * left + L  # twice the center
        a_lo, a_hi = c2 - 17 * L, c2 - 3 * L
        b_lo, b_hi = c2 + 3 * L, c2 + 17 * L
        S_lo = np.round(lo * 2 ** (unit + 1)).astype(np.int64)
        S_hi = np.round(hi * 2 ** (unit + 1)).astype(np.int64)
        ok_a = np.zeros(len(rows), dtype=bool)
        ok_b = np.zeros(len(rows), dtype=bool)
        for s0, s1 in zip(S_lo, S_hi):
            ok_a |= (a_lo >= s0) & (a_hi <= s1)
            ok_b |= (b_lo >= s0) & (b_hi <= s1)
        out[rows] = ok_a & ok_b
    return out


def normal_boundary_split(cme: Cme, level: int) -> tuple[np.ndarray, np.ndarray]:
    rows = np.flatnonzero(cme.table.level == level)
    nm = normal_mask(cme)[rows]
    return rows[nm], rows[~nm]


def is_normal(tile: Tile, p: UsgtfParams) -> bool:
    """Reference test on one tile with exact rationals."""
    return all(any(s.contains_interval(c) for s in _merged_tops(p)) for c in star(tile.time))


# --- validation ----------------------------------------------------------------

@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


def validate_cme(cme: Cme, exhaustive: bool = False) -> list:
    """Every invariant of the embedding; returns a list of Check records."""
    prof = cme.profile
    out: list[Check] = []

    def add(name, ok, detail=""):
        out.append(Check(name, bool(ok), detail))

    # USGTF round trip and chain sharing
    rt, kc = True, True
    for sid in range(len(cme.placements)):
        u = cme.usgtf(sid)
        if params_from_tiles(u.tiles, prof.sigma) != u.params:
            rt = False
        if not keycompress_check(u):
            kc = False
    add("usgtf_round_trip", rt)
    add("keycompress", kc)
    # towers and multi-towers
    for j in range(1, prof.L + 1):
        mt = cme.multitower(j)
        v = multitower_check(mt, exhaustive)
        add(f"multitower_level_{j}", v.ok, v.detail if not v.ok else f"height {v.height}")
        heights = {t.height for t in mt.towers}
        add(f"height_level_{j}", heights == {prof.h}, str(sorted(heights)))
    # chain embedding
    for j in range(1, prof.L):
        add(f"embeds_{j}_{j + 1}", embeds(cme.multitower(j), cme.multitower(j + 1)))
    # bases of the deepest layers disjoint across levels
    bases = {j: [I for i in cme.structures(j, prof.h) for I in cme.placements[i].params.tops]
             for j in range(1, prof.L + 1)}
    disjoint = True
    for j1 in range(1, prof.L + 1):
        for j2 in range(j1 + 1, prof.L + 1):
            if any(not a.disjoint(b) for a in bases[j1] for b in bases[j2]):
                disjoint = False
    add("deepest_bases_disjoint", disjoint,
        "" if disjoint else "finer levels sit inside the deepest layer when h <= 2")
    # nested-or-disjoint tops across levels
    nd = True
    tops = [(pl.level, I) for pl in cme.placements for I in pl.params.tops]
    for l1, I1 in tops:
        for l2, I2 in tops:
            if l1 > l2 and not (I1.disjoint(I2) or I1.contains(I2)):
                nd = False
    add("tops_nested_or_disjoint", nd)
    # linearization realizes every target exactly
    if cme.codes is not None:
        rep = mass_report(cme)
        add("restricted_mass_exact", rep["restricted_mass_exact"], f"{rep['mismatches']} mismatches")
        add("mass_bins", rep["bins_match_generation"])
        img = set(np.unique(cme.codes).tolist()) <= set(range(len(cme.alphas) + 1))
        add("image_in_frequency_list", img)
    return out


def report_json(checks: list) -> str:
    return json.dumps([{"name": c.name, "ok": c.ok, "detail": c.detail} for c in checks], indent=1)
