"""Tiles, the frequency-choice function N, E-sets, masses and the mass-bin partition."""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .dyadic import DyadicInterval, MeasurableSet, RealInterval, pow2


@dataclass(frozen=True, order=True)
class Tile:
    """Area-one rectangle I x omega; omega is a dyadic interval of length 1/|I|."""

    time: DyadicInterval
    freq: DyadicInterval

    def __post_init__(self):
        if self.time.scale + self.freq.scale != 0:
            raise ValueError("tile must have area one")

    @classmethod
    def at(cls, time: DyadicInterval, alpha: int) -> "Tile":
        """Tile with time interval I whose frequency interval starts at alpha."""
        width = 1 << time.scale
        if alpha % width:
            raise ValueError(f"alpha {alpha} is not a multiple of 1/|I| = {width}")
        return cls(time, DyadicInterval(-time.scale, alpha // width))

    @property
    def alpha(self) -> int:
        return self.freq.index << self.time.scale

    @property
    def width(self) -> int:
        """|omega| = 1/|I|."""
        return 1 << self.time.scale

    def freq_contains(self, a) -> bool:
        return self.alpha <= a < self.alpha + self.width

    def as_tuple(self) -> tuple:
        return (self.time.scale, self.time.index, self.alpha)

    def __str__(self) -> str:
        return f"{self.time}x{self.alpha}"


def tile_leq(p1: Tile, p2: Tile) -> bool:
    """I1 ⊆ I2 and omega1 ⊇ omega2."""
    return p2.time.contains(p1.time) and p1.freq.contains(p2.freq)


def tile_lt(p1: Tile, p2: Tile) -> bool:
    return tile_leq(p1, p2) and p1.time.scale > p2.time.scale


def dilate_freq(a, p: Tile) -> RealInterval:
    return RealInterval(p.alpha, p.alpha + p.width).dilate(a)


def tile_dilate(a, p: Tile) -> tuple[DyadicInterval, RealInterval]:
    """a P = [a omega, I]: the time interval with the center-dilated frequency interval."""
    if a <= 0:
        raise ValueError("a must be positive")
    return p.time, dilate_freq(a, p)


@dataclass(frozen=True)
class Linearization:
    """Step function N on [0,1) at resolution R with values in a sigma-separated frequency list."""

    resolution: int
    values: tuple
    universe: tuple
    sigma: int = 10

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        object.__setattr__(self, "universe", tuple(sorted(set(int(a) for a in self.universe))))
        if len(self.values) != 1 << self.resolution:
            raise ValueError("need 2^R values")
        if self.sigma < 10:
            raise ValueError("sigma must be at least 10")
        allowed = set(self.universe)
        bad = {v for v in self.values if v not in allowed}
        if bad:
            raise ValueError(f"values outside the frequency universe: {sorted(bad)[:3]}")
        for a, b in zip(self.universe, self.universe[1:]):
            if a > 0 and b < a << self.sigma:
                raise ValueError(f"frequencies {a}, {b} are not 2^{self.sigma}-separated")
        index = {a: i for i, a in enumerate(self.universe)}
        object.__setattr__(self, "_codes", np.array([index[v] for v in self.values], dtype=np.int64))

    def codes_in(self, lo: int, hi: int) -> tuple[int, int]:
        """Universe code range [i, j) of frequencies in [lo, hi)."""
        return bisect.bisect_left(self.universe, lo), bisect.bisect_left(self.universe, hi)

    @classmethod
    def from_codes(cls, resolution: int, codes, universe, sigma: int = 10) -> "Linearization":
        """Build from an array of indices into the sorted frequency list."""
        universe = tuple(sorted(int(a) for a in universe))
        codes = np.asarray(codes, dtype=np.int64)
        return cls(resolution, tuple(universe[c] for c in codes.tolist()), universe, sigma)

    @classmethod
    def constant(cls, a: int, resolution: int = 0, sigma: int = 10):
        return cls(resolution, (a,) * (1 << resolution), (a,), sigma)

    def value_at_cell(self, R: int, c: int) -> int:
        if R >= self.resolution:
            return self.values[c >> (R - self.resolution)]
        raise ValueError("cell coarser than the linearization")

    def to_json(self) -> dict:
        return {"resolution": self.resolution, "values": [str(v) for v in self.values],
                "universe": [str(a) for a in self.universe], "sigma": self.sigma}


def e_set(p: Tile, N: Linearization) -> MeasurableSet:
    """E(P) = {x in I_P : N(x) in omega_P}."""
    R = max(N.resolution, p.time.scale)
    k = R - p.time.scale
    lo = p.time.index << k
    return MeasurableSet(R, tuple(c for c in range(lo, lo + (1 << k)) if p.freq_contains(N.value_at_cell(R, c))))


def restricted_mass(p: Tile, N: Linearization) -> Fraction:
    """|E(P)|/|I_P|, counted on the coded array of N."""
    i, j = N.codes_in(p.alpha, p.alpha + p.width)
    if p.time.scale >= N.resolution:
        c = N._codes[p.time.index >> (p.time.scale - N.resolution)]
        return Fraction(int(i <= c < j))
    k = N.resolution - p.time.scale
    block = N._codes[p.time.index << k:(p.time.index + 1) << k]
    return Fraction(int(np.count_nonzero((block >= i) & (block < j))), 1 << k)


def damping(p: Tile, q: Tile, N0: int) -> Fraction:
    """(1 + dist(10 omega_p, 10 omega_q)/|omega_p|)^-N0."""
    d = dilate_freq(10, p).distance(dilate_freq(10, q))
    return (1 + d / p.width) ** -N0


@dataclass
class TileUniverse:
    tiles: tuple
    linearization: Linearization
    N0: int = 10
    mass_floor: Fraction | None = None
    _r_mass: dict = field(default_factory=dict, repr=False)
    _mass: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.tiles = tuple(sorted(set(self.tiles)))

    def r_mass(self, p: Tile) -> Fraction:
        if p not in self._r_mass:
            self._r_mass[p] = restricted_mass(p, self.linearization)
        return self._r_mass[p]

    def time_scales(self) -> list[int]:
        return sorted({p.time.scale for p in self.tiles})

    def scale_separation_ok(self, gap: int = 10) -> bool:
        s = self.time_scales()
        return all(b - a >= gap for a, b in zip(s, s[1:]))

    def to_json(self) -> str:
        return json.dumps({
            "tiles": [[p.time.scale, p.time.index, str(p.alpha)] for p in self.tiles],
            "linearization": self.linearization.to_json(),
            "config": {"N0": self.N0, "sigma": self.linearization.sigma},
        })


def mass(p: Tile, U: TileUniverse) -> Fraction:
    """sup over P' in U (and P itself) with I_P ⊆ I_P' of A0(P') times the frequency damping."""
    if p in U._mass:
        return U._mass[p]
    best = U.r_mass(p)
    for q in U.tiles:
        if q != p and q.time.contains(p.time):
            r = U.r_mass(q)
            if r > best:
                cand = r * damping(p, q, U.N0)
                if cand > best:
                    best = cand
    U._mass[p] = best
    return best


def mass_bin(a: Fraction) -> int:
    """n with a in (2^-n-1, 2^-n]; a must lie in (0, 1]."""
    if not 0 < a <= 1:
        raise ValueError("mass must lie in (0, 1]")
    n = 0
    while a <= pow2(-n - 1):
        n += 1
    return n


@dataclass
class Classification:
    p_zero: list
    p_bar0: list
    bins: dict
    maximal: dict
    below_floor: list

    def summary(self) -> dict:
        return {"P(0)": len(self.p_zero), "P0bar": len(self.p_bar0),
                "bins": {n: len(v) for n, v in sorted(self.bins.items())},
                "maximal": {n: len(v) for n, v in sorted(self.maximal.items())},
                "below_floor": len(self.below_floor)}


def maximal_elements(tiles: Sequence[Tile]) -> list[Tile]:
    return [p for p in tiles if not any(q != p and tile_leq(p, q) for q in tiles)]


def classify(U: TileUniverse) -> Classification:
    p_zero, p_bar0, bins, low = [], [], {}, []
    for p in U.tiles:
        if dilate_freq(100, p).contains_point(0):
            p_zero.append(p)
            continue
        a = mass(p, U)
        if a == 0:
            p_bar0.append(p)
            continue
        if U.mass_floor is not None and a < U.mass_floor:
            low.append(p)
        bins.setdefault(mass_bin(a), []).append(p)
    maximal = {n: maximal_elements([p for p in v if mass(p, U) > pow2(-n - 1)]) for n, v in bins.items()}
    return Classification(p_zero, p_bar0, bins, maximal, low)


def mass_excess(tiles: Iterable[Tile], U: TileUniverse) -> Fraction:
    """max over tiles with positive r-mass of A(P)/A0(P)."""
    worst = Fraction(1)
    for p in tiles:
        a0 = U.r_mass(p)
        if a0 > 0:
            worst = max(worst, mass(p, U) / a0)
    return worst
