"""Exact dyadic geometry and piecewise-constant functions on [0, 1)."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def pow2(k: int) -> Fraction:
    """Exact 2**k for any integer k."""
    return Fraction(1 << k) if k >= 0 else Fraction(1, 1 << -k)


@dataclass(frozen=True, order=True)
class DyadicInterval:
    """[index * 2^-scale, (index+1) * 2^-scale). Negative scale gives long intervals."""

    scale: int
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("index must be nonnegative")

    @property
    def length(self) -> Fraction:
        return pow2(-self.scale)

    @property
    def left(self) -> Fraction:
        return self.index * self.length

    @property
    def right(self) -> Fraction:
        return (self.index + 1) * self.length

    @property
    def center(self) -> Fraction:
        return (2 * self.index + 1) * self.length / 2

    def parent(self) -> "DyadicInterval":
        return DyadicInterval(self.scale - 1, self.index >> 1)

    def ancestor(self, scale: int) -> "DyadicInterval":
        if scale > self.scale:
            raise ValueError("ancestor must be coarser")
        return DyadicInterval(scale, self.index >> (self.scale - scale))

    def contains(self, other: "DyadicInterval") -> bool:
        """Non-strict containment other ⊆ self."""
        if other.scale < self.scale:
            return False
        return (other.index >> (other.scale - self.scale)) == self.index

    def disjoint(self, other: "DyadicInterval") -> bool:
        return not (self.contains(other) or other.contains(self))

    def contains_point(self, x) -> bool:
        x = _frac(x)
        return self.left <= x < self.right

    def to_real(self) -> "RealInterval":
        return RealInterval(self.left, self.right)

    def __str__(self) -> str:
        return f"[{self.left},{self.right})"


def children(I: DyadicInterval) -> tuple[DyadicInterval, DyadicInterval]:
    return DyadicInterval(I.scale + 1, 2 * I.index), DyadicInterval(I.scale + 1, 2 * I.index + 1)


def subintervals(J: DyadicInterval, m: int) -> list[DyadicInterval]:
    if m < 0:
        raise ValueError("m must be nonnegative")
    base = J.index << m
    return [DyadicInterval(J.scale + m, base + k) for k in range(1 << m)]


def dyadic_containing(x, scale: int) -> DyadicInterval:
    """The dyadic interval of the given scale containing the point x >= 0."""
    x = _frac(x)
    if x < 0:
        raise ValueError("x must be nonnegative")
    q = x / pow2(-scale)
    return DyadicInterval(scale, q.numerator // q.denominator)


@dataclass(frozen=True)
class RealInterval:
    """Interval with exact rational endpoints, lo < hi."""

    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        object.__setattr__(self, "lo", _frac(self.lo))
        object.__setattr__(self, "hi", _frac(self.hi))
        if not self.lo < self.hi:
            raise ValueError("need lo < hi")

    @property
    def length(self) -> Fraction:
        return self.hi - self.lo

    @property
    def center(self) -> Fraction:
        return (self.lo + self.hi) / 2

    def dilate(self, d) -> "RealInterval":
        half = _frac(d) * self.length / 2
        return RealInterval(self.center - half, self.center + half)

    def contains_point(self, x, closed: bool = False) -> bool:
        x = _frac(x)
        return self.lo <= x <= self.hi if closed else self.lo <= x < self.hi

    def contains_interval(self, other: "RealInterval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def distance(self, other: "RealInterval") -> Fraction:
        """Distance between the closures."""
        return max(Fraction(0), other.lo - self.hi, self.lo - other.hi)

    def __str__(self) -> str:
        return f"[{self.lo},{self.hi})"


def star(I: DyadicInterval) -> tuple[RealInterval, RealInterval]:
    """The two components of the annulus around I: [c-17/2|I|, c-3/2|I|] and its mirror."""
    c, L = I.center, I.length
    return (
        RealInterval(c - Fraction(17, 2) * L, c - Fraction(3, 2) * L),
        RealInterval(c + Fraction(3, 2) * L, c + Fraction(17, 2) * L),
    )


@dataclass(frozen=True)
class MeasurableSet:
    """Finite union of scale-R cells of [0, 1)."""

    resolution: int
    cells: tuple[int, ...]

    def __post_init__(self):
        cells = tuple(sorted(set(int(c) for c in self.cells)))
        if cells and (cells[0] < 0 or cells[-1] >= 1 << self.resolution):
            raise ValueError("cell index out of range")
        object.__setattr__(self, "cells", cells)

    @classmethod
    def from_intervals(cls, intervals: Iterable[DyadicInterval], resolution: int | None = None):
        intervals = list(intervals)
        R = resolution if resolution is not None else max((I.scale for I in intervals), default=0)
        cells = []
        for I in intervals:
            if I.scale > R:
                raise ValueError("interval finer than resolution")
            cells.extend(c.index for c in subintervals(I, R - I.scale))
        return cls(R, tuple(cells))

    @classmethod
    def empty(cls, resolution: int = 0):
        return cls(resolution, ())

    @property
    def measure(self) -> Fraction:
        return len(self.cells) * pow2(-self.resolution)

    def refine(self, R: int) -> "MeasurableSet":
        if R < self.resolution:
            raise ValueError("cannot coarsen")
        k = R - self.resolution
        return MeasurableSet(R, tuple(c << k | j for c in self.cells for j in range(1 << k)))

    def _common(self, other):
        R = max(self.resolution, other.resolution)
        return R, set(self.refine(R).cells), set(other.refine(R).cells)

    def union(self, other):
        R, a, b = self._common(other)
        return MeasurableSet(R, tuple(a | b))

    def intersection(self, other):
        R, a, b = self._common(other)
        return MeasurableSet(R, tuple(a & b))

    def difference(self, other):
        R, a, b = self._common(other)
        return MeasurableSet(R, tuple(a - b))

    __or__, __and__, __sub__ = union, intersection, difference

    def indicator(self) -> "StepFunction":
        vals = [0] * (1 << self.resolution)
        for c in self.cells:
            vals[c] = 1
        return StepFunction(self.resolution, tuple(vals))

    def to_json(self) -> str:
        return json.dumps({"resolution": self.resolution, "cells": list(self.cells)})

    @classmethod
    def from_json(cls, text: str):
        d = json.loads(text)
        return cls(d["resolution"], tuple(d["cells"]))


@dataclass(frozen=True)
class StepFunction:
    """One value per scale-R cell. Values are Fractions (exact) or floats (numeric)."""

    resolution: int
    values: tuple

    def __post_init__(self):
        if len(self.values) != 1 << self.resolution:
            raise ValueError("need exactly 2^R values")
        object.__setattr__(self, "values", tuple(self.values))

    @classmethod
    def exact(cls, resolution: int, values: Sequence):
        return cls(resolution, tuple(_frac(v) for v in values))

    @property
    def cell_length(self) -> Fraction:
        return pow2(-self.resolution)

    def integral(self):
        return sum(self.values) * self.cell_length

    def l1_norm(self):
        return sum(abs(v) for v in self.values) * self.cell_length

    def sup_norm(self):
        return max(abs(v) for v in self.values)

    def refine(self, R: int) -> "StepFunction":
        if R < self.resolution:
            raise ValueError("cannot coarsen")
        k = 1 << (R - self.resolution)
        return StepFunction(R, tuple(v for v in self.values for _ in range(k)))

    def scale(self, c) -> "StepFunction":
        return StepFunction(self.resolution, tuple(c * v for v in self.values))

    def shift(self, c) -> "StepFunction":
        return StepFunction(self.resolution, tuple(v + c for v in self.values))

    def to_json(self) -> str:
        return json.dumps({"resolution": self.resolution, "values": [str(v) for v in self.values]})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell", "value"])
        for i, v in enumerate(self.values):
            w.writerow([i, str(v)])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str):
        d = json.loads(text)
        return cls.exact(d["resolution"], [Fraction(v) for v in d["values"]])


def level_profile(f: StepFunction) -> list[tuple]:
    """Distinct nonzero magnitudes v_1 > v_2 > ... with the measure where |f| equals each."""
    counts: dict = {}
    for v in f.values:
        a = abs(v)
        if a:
            counts[a] = counts.get(a, 0) + 1
    return [(v, counts[v] * f.cell_length) for v in sorted(counts, reverse=True)]


def weak_l1_norm(f: StepFunction):
    """sup_λ λ |{|f| > λ}|, attained as max_i v_i |{|f| >= v_i}|."""
    best, cum = 0, 0
    for v, m in level_profile(f):
        cum += m
        best = max(best, v * cum)
    return best


def _block_means(vals: list, width: int) -> list:
    return [sum(vals[i:i + width]) / width for i in range(0, len(vals), width)]


def dyadic_bmo_norm(f: StepFunction):
    """sup over dyadic I of scales 0..R of the mean oscillation of f on I."""
    vals = list(f.values)
    n = len(vals)
    best = 0
    width = n
    while width >= 1:
        for s in range(0, n, width):
            block = vals[s:s + width]
            m = sum(block) / width
            osc = sum(abs(v - m) for v in block) / width
            if osc > best:
                best = osc
        width //= 2
    return best


def hl_maximal(f: StepFunction) -> StepFunction:
    """Dyadic maximal function: sup of |f| averages over dyadic intervals containing each cell."""
    a = [abs(v) for v in f.values]
    out = list(a)
    R = f.resolution
    level = a
    for k in range(1, R + 1):
        level = [(level[2 * i] + level[2 * i + 1]) / 2 for i in range(len(level) // 2)]
        w = 1 << k
        for i, m in enumerate(level):
            for c in range(i * w, (i + 1) * w):
                if m > out[c]:
                    out[c] = m
    return StepFunction(R, tuple(out))
