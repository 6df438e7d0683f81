"""Trees, forests, USGTFs, towers, multi-towers and the embedding relation."""

from __future__ import annotations

import bisect
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .dyadic import DyadicInterval, RealInterval, subintervals
from .tiles import Tile, dilate_freq, tile_leq


def prec(A: Iterable[DyadicInterval], B: Iterable[DyadicInterval]) -> bool:
    """Every member of A lies inside some member of B (containment is non-strict)."""
    B = sorted(B, key=lambda I: I.left)
    lefts = [I.left for I in B]
    for I in A:
        k = bisect.bisect_right(lefts, I.left) - 1
        if k < 0 or not B[k].contains(I):
            return False
    return True


def _union_measure(intervals: Iterable[DyadicInterval]) -> Fraction:
    spans = sorted((I.left, I.right) for I in intervals)
    total, end = Fraction(0), None
    for a, b in spans:
        if end is None or a >= end:
            total += b - a
            end = b
        elif b > end:
            total += b - end
            end = b
    return total


# --- trees and forests --------------------------------------------------------

def is_tree(p: Iterable[Tile], top: Tile, universe: Iterable[Tile] | None = None) -> bool:
    p = set(p)
    if not all(tile_leq(q, top) for q in p):
        return False
    if universe is None:
        return True
    for mid in universe:
        if mid in p:
            continue
        if tile_leq(mid, top) and any(tile_leq(q, mid) for q in p):
            return False
    return True


def is_sparse_tree(p: Iterable[Tile], top: Tile, C) -> bool:
    p = list(p)
    for q in p:
        packed = sum((r.time.length for r in p if q.time.contains(r.time)), Fraction(0))
        if packed > C * q.time.length:
            return False
    return True


def _dilated_leq(p: Tile, a, q: Tile, b) -> bool:
    """a P <= b Q: I_P inside I_Q and a omega_P containing b omega_Q."""
    return q.time.contains(p.time) and dilate_freq(a, p).contains_interval(dilate_freq(b, q))


def counting_function_sup(tops: Iterable[DyadicInterval]) -> int:
    events = []
    for I in tops:
        events.append((I.left, 1))
        events.append((I.right, -1))
    events.sort()
    best = cur = 0
    for _, d in events:
        cur += d
        best = max(best, cur)
    return best


@dataclass
class ForestReport:
    trees: list
    counting_sup: int
    separated: bool
    violation: tuple | None
    verdict: bool


def forest_check(p: Iterable[Tile], n: int, C_f=1) -> ForestReport:
    tiles = sorted(set(p), key=lambda t: (t.time.left, t.alpha, t.time.scale))
    tops = [t for t in tiles if not any(q != t and tile_leq(t, q) for q in tiles)]
    trees: list[tuple[Tile, list[Tile]]] = [(t, []) for t in tops]
    for t in tiles:
        for top, members in trees:
            if tile_leq(t, top):
                members.append(t)
                break
    violation = None
    for i, (_, members) in enumerate(trees):
        for j, (top_j, _) in enumerate(trees):
            if i == j:
                continue
            bad = next((q for q in members if _dilated_leq(q, 2, top_j, 10)), None)
            if bad is not None:
                violation = (bad, top_j)
                break
        if violation:
            break
    sup = counting_function_sup(top.time for top, _ in trees)
    return ForestReport(trees, sup, violation is None, violation,
                        violation is None and sup <= C_f * (1 << n))


# --- USGTF -------------------------------------------------------------------

@dataclass(frozen=True)
class UsgtfParams:
    tops: tuple
    alphas: tuple
    r: int
    n: int
    sigma: int = 10

    def __post_init__(self):
        object.__setattr__(self, "tops", tuple(sorted(self.tops)))
        object.__setattr__(self, "alphas", tuple(int(a) for a in self.alphas))
        if not 1 <= self.r <= self.n:
            raise ValueError("generation needs 1 <= r <= n")
        if len(self.alphas) != 1 << (self.n - 1):
            raise ValueError(f"need 2^(n-1) = {1 << (self.n - 1)} frequencies, got {len(self.alphas)}")
        if not self.tops or len({I.scale for I in self.tops}) != 1:
            raise ValueError("tops must be nonempty with equal lengths")
        if any(a.right > b.left for a, b in zip(self.tops, self.tops[1:])):
            raise ValueError("tops must be disjoint")
        for a, b in zip(self.alphas, self.alphas[1:]):
            if b <= a or (a > 0 and b < a << self.sigma):
                raise ValueError("frequencies must be increasing and sigma-separated")

    @property
    def depth(self) -> int:
        return self.n - self.r

    @property
    def bottoms(self) -> tuple:
        return tuple(J for I in self.tops for J in subintervals(I, self.depth))

    def block(self, l: int) -> tuple:
        """Frequencies carried by the l-th bottom of each top (0-based)."""
        w = 1 << (self.r - 1)
        return self.alphas[l * w:(l + 1) * w]

    def bottom_of(self, top: DyadicInterval, u: int) -> DyadicInterval:
        """Bottom interval under `top` that carries alphas[u]."""
        return DyadicInterval(top.scale + self.depth, (top.index << self.depth) + (u >> (self.r - 1)))

    def to_json(self) -> dict:
        return {"tops": [[I.scale, I.index] for I in self.tops],
                "alphas": [str(a) for a in self.alphas], "r": self.r, "n": self.n}

    @classmethod
    def from_json(cls, d: dict, sigma: int = 10) -> "UsgtfParams":
        return cls(tuple(DyadicInterval(s, i) for s, i in d["tops"]),
                   tuple(int(a) for a in d["alphas"]), d["r"], d["n"], sigma)


@dataclass(frozen=True)
class Constraint:
    """E-set target: measure 2^-r |I| of cells in `bottom` carrying `alpha`."""

    bottom: DyadicInterval
    alpha: int
    r: int

    @property
    def target(self) -> Fraction:
        return self.bottom.length / (1 << self.r)


@dataclass
class Usgtf:
    params: UsgtfParams
    levels: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)

    @property
    def tiles(self) -> list:
        return [p for m in sorted(self.levels) for p in self.levels[m]]

    @property
    def tops(self) -> tuple:
        return self.params.tops

    @property
    def bottoms(self) -> tuple:
        return self.params.bottoms

    @property
    def alphas(self) -> tuple:
        return self.params.alphas


def build_usgtf(params: UsgtfParams) -> Usgtf:
    """Tiles at every level r..n: each frequency runs in one chain from each top down to its bottom."""
    levels = {m: [] for m in range(params.r, params.n + 1)}
    constraints = []
    for top in params.tops:
        for u, a in enumerate(params.alphas):
            J = params.bottom_of(top, u)
            for m in range(params.r, params.n + 1):
                levels[m].append(Tile.at(J.ancestor(top.scale + params.n - m), a))
            constraints.append(Constraint(J, a, params.r))
    return Usgtf(params, levels, constraints)


def params_from_tiles(tiles: Iterable[Tile], sigma: int = 10) -> UsgtfParams:
    tiles = list(tiles)
    coarse = min(p.time.scale for p in tiles)
    fine = max(p.time.scale for p in tiles)
    alphas = sorted({p.alpha for p in tiles})
    n = len(alphas).bit_length()
    if 1 << (n - 1) != len(alphas):
        raise ValueError("frequency count is not a power of two")
    tops = sorted({p.time for p in tiles if p.time.scale == coarse})
    return UsgtfParams(tuple(tops), tuple(alphas), n - (fine - coarse), n, sigma)


def keycompress_check(u: Usgtf) -> bool:
    """Each top-level tile has exactly one bottom-level tile below it, and the chain shares its E target."""
    bottom_by_alpha = defaultdict(list)
    for q in u.levels[u.params.r]:
        bottom_by_alpha[q.alpha].append(q)
    targets = {(c.bottom, c.alpha) for c in u.constraints}
    for p in u.levels[u.params.n]:
        below = [q for q in bottom_by_alpha[p.alpha] if tile_leq(q, p)]
        if len(below) != 1 or (below[0].time, p.alpha) not in targets:
            return False
    return True


def frequencies_isolated(tiles: Iterable[Tile]) -> bool:
    """No tile's frequency interval contains a frequency other than its own.

    When this holds, comparable tiles must share their left frequency, so order
    tests can be grouped by frequency without losing any pair.
    """
    tiles = list(tiles)
    alphas = sorted({p.alpha for p in tiles})
    for p in tiles:
        k = bisect.bisect_right(alphas, p.alpha)
        if k < len(alphas) and alphas[k] < p.alpha + p.width:
            return False
    return True


def comparable_pairs(groups: Sequence[Iterable[Tile]], limit: int = 1) -> list:
    """Pairs (P, P') from different groups with P <= P', grouped by frequency."""
    by_alpha = defaultdict(list)
    for g, tiles in enumerate(groups):
        for p in tiles:
            by_alpha[p.alpha].append((g, p))
    out = []
    for members in by_alpha.values():
        if len({g for g, _ in members}) < 2:
            continue
        for g1, p in members:
            for g2, q in members:
                if g1 != g2 and tile_leq(p, q):
                    out.append((p, q))
                    if len(out) >= limit:
                        return out
    return out


def comparable_pairs_brute(groups: Sequence[Iterable[Tile]]) -> list:
    groups = [list(g) for g in groups]
    return [(p, q) for i, a in enumerate(groups) for j, b in enumerate(groups) if i != j
            for p in a for q in b if tile_leq(p, q)]


# --- towers ------------------------------------------------------------------

@dataclass
class Tower:
    layers: list

    @property
    def height(self) -> int:
        return len(self.layers)

    @property
    def basis(self) -> tuple:
        return self.layers[0].tops

    @property
    def tiles(self) -> list:
        return [p for u in self.layers for p in u.tiles]

    @property
    def alphas(self) -> tuple:
        return tuple(sorted(a for u in self.layers for a in u.alphas))


@dataclass
class MultiTower:
    towers: list

    @property
    def tiles(self) -> list:
        return [p for t in self.towers for p in t.tiles]

    @property
    def usgtfs(self) -> list:
        return [u for t in self.towers for u in t.layers]


@dataclass
class Verdict:
    ok: bool
    clause: str | None = None
    detail: str = ""
    height: int | None = None
    basis_measure: Fraction | None = None


def tower_check(t: Tower | Sequence[Usgtf], exhaustive: bool = False) -> Verdict:
    """Layer nesting, disjoint frequency sets, and cross-layer incomparability.

    Two consecutive layers may share tops and bottoms only as the final pair;
    there the nesting clause is replaced by equality of the interval families.
    """
    layers = t.layers if isinstance(t, Tower) else list(t)
    m = len(layers)
    for l in range(m - 1):
        lo, hi = layers[l], layers[l + 1]
        if hi.tops == lo.tops:
            if l != m - 2 or hi.bottoms != lo.bottoms:
                return Verdict(False, "prec", f"layers {l + 1},{l + 2} share tops away from the final pair")
        elif not prec(hi.tops, lo.bottoms):
            return Verdict(False, "prec", f"tops of layer {l + 2} not inside bottoms of layer {l + 1}")
    seen = {}
    for l, u in enumerate(layers):
        for a in u.alphas:
            if a in seen:
                return Verdict(False, "nocomfreq", f"frequency {a} in layers {seen[a] + 1} and {l + 1}")
            seen[a] = l
    groups = [u.tiles for u in layers]
    if exhaustive:
        bad = comparable_pairs_brute(groups)
    else:
        if not frequencies_isolated(p for g in groups for p in g):
            return Verdict(False, "incomp", "frequency intervals not isolated; use exhaustive mode")
        bad = comparable_pairs(groups)
    if bad:
        p, q = bad[0]
        return Verdict(False, "incomp", f"{p} <= {q}")
    return Verdict(True, None, "", m, _union_measure(layers[0].tops))


def multitower_check(mt: MultiTower, exhaustive: bool = False) -> Verdict:
    for i, t in enumerate(mt.towers):
        v = tower_check(t, exhaustive)
        if not v.ok:
            v.detail = f"tower {i}: {v.detail}"
            return v
    bases = [t.basis for t in mt.towers]
    spans = sorted((I.left, I.right, i) for i, b in enumerate(bases) for I in b)
    for (a0, b0, i), (a1, b1, j) in zip(spans, spans[1:]):
        if i != j and a1 < b0:
            return Verdict(False, "basis", f"bases of towers {i} and {j} overlap")
    return Verdict(True, None, "", max((t.height for t in mt.towers), default=0),
                   _union_measure(I for b in bases for I in b))


# --- embedding ---------------------------------------------------------------

def _structures(F) -> list:
    if isinstance(F, Usgtf):
        return [F]
    if isinstance(F, Tower):
        return list(F.layers)
    if isinstance(F, MultiTower):
        return F.usgtfs
    return list(F)


def embeds(F1, F2) -> bool:
    """F1 ⊏ F2: generation gap, tops of F1 inside bottoms of F2, frequencies contained, tile domination."""
    S1, S2 = _structures(F1), _structures(F2)
    n1 = max(u.params.n for u in S1)
    r2 = min(u.params.r for u in S2)
    if n1 > r2:
        return False
    tops1 = [I for u in S1 for I in u.tops]
    btms2 = [J for u in S2 for J in u.bottoms]
    if not prec(tops1, btms2):
        return False
    a2 = {a for u in S2 for a in u.alphas}
    if not {a for u in S1 for a in u.alphas} <= a2:
        return False
    low = defaultdict(list)
    for u in S2:
        for q in u.levels[u.params.r]:
            low[q.alpha].append(q)
    for u in S1:
        for p in u.levels[u.params.n]:
            if not any(tile_leq(p, q) for q in low[p.alpha]):
                return False
    return True


# --- generalized forests -------------------------------------------------------

@dataclass
class ForestFamilyReport:
    equal_top_lengths: bool
    domination: bool
    saturated: bool

    @property
    def ok(self) -> bool:
        return self.equal_top_lengths and self.domination and self.saturated


def usgf_check(u: Usgtf, universe: Iterable[Tile] | None = None) -> ForestFamilyReport:
    """Per-level equal lengths, domination of each finer tile by a coarser one, and order-convexity.

    Saturation is checked against `universe` (the structure itself when omitted):
    any universe tile squeezed between two tiles of the structure must belong to it.
    """
    equal = all(len({p.time.scale for p in ts}) == 1 for ts in u.levels.values())
    top = u.params.n
    by_alpha = defaultdict(list)
    for m, ts in u.levels.items():
        for p in ts:
            by_alpha[p.alpha].append((m, p))
    dominated = all(
        any(m2 > m and tile_leq(p, q) for m2, q in by_alpha[p.alpha])
        for m, ts in u.levels.items() if m < top for p in ts
    )
    own = set(u.tiles)
    saturated = True
    if universe is not None:
        pool = defaultdict(list)
        for q in universe:
            pool[q.alpha].append(q)
        for a, members in by_alpha.items():
            inside = [p for _, p in members]
            for mid in pool[a]:
                if mid in own:
                    continue
                if any(tile_leq(p, mid) for p in inside) and any(tile_leq(mid, q) for q in inside):
                    saturated = False
                    break
    return ForestFamilyReport(equal, dominated, saturated)

