"""Rearrangement-invariant functionals on step functions.

Fundamental functions are stored in the form phi(t) = t * g(log2(1/t)), where the
slowly varying factor g is evaluated with mpmath. That lets the growth integral
reach cutoffs such as 2^(-2^(2^40)) without underflow.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import mpmath

from .dyadic import StepFunction, level_profile

LN2 = mpmath.log(2)


def ilog(x, k: int):
    """k-fold iterated log2. Iterates of order >= 2 are clamped below at 1."""
    y = mpmath.mpf(x)
    for i in range(k):
        y = mpmath.log(y, 2)
        if i >= 1 and y < 1:
            y = mpmath.mpf(1)
    return y


def loglog(x):
    return ilog(x, 2)


@dataclass(frozen=True)
class FundamentalFunction:
    """phi(t) = t * slowly(log2(1/t)) on (0, 1], phi(0) = 0.

    ``exact`` optionally gives a rational-valued evaluator used in exact mode.
    """

    name: str
    slowly: Callable
    exact: Callable | None = field(default=None, compare=False)

    def __call__(self, t):
        if t == 0:
            return Fraction(0) if self.exact else 0.0
        if self.exact is not None:
            return self.exact(t)
        t = mpmath.mpf(t.numerator) / t.denominator if isinstance(t, Fraction) else mpmath.mpf(t)
        return float(t * self.slowly(-mpmath.log(t, 2)))

    def ratio_to(self, other: "FundamentalFunction", L):
        """other(t) / self(t) at t = 2^-L, computed without forming t."""
        return other.slowly(L) / self.slowly(L)

    def dual(self) -> "FundamentalFunction":
        """t -> t / phi(t), the fundamental function of the associate space."""
        return FundamentalFunction(f"dual({self.name})", lambda L: 1 / self.slowly(L))

    def check_shape(self, n: int = 256) -> dict:
        """Positivity, monotonicity and concavity on a log-uniform grid of (0, 1]."""
        ts = sorted({2.0 ** (-k / 8) for k in range(n)})
        vals = [self(t) for t in ts]
        positive = all(v > 0 for v in vals)
        increasing = all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
        slopes = [(vals[i + 1] - vals[i]) / (ts[i + 1] - ts[i]) for i in range(len(ts) - 1)]
        concave = all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(slopes, slopes[1:]))
        return {"positive": positive, "nondecreasing": increasing, "concave": concave}


LOG2_17 = mpmath.log(17, 2)


def identity() -> FundamentalFunction:
    return FundamentalFunction("identity", lambda L: mpmath.mpf(1), exact=lambda t: Fraction(t))


def phi0() -> FundamentalFunction:
    """s loglog(17/s) loglogloglog(17/s)."""
    return FundamentalFunction("phi0", _phi0_slow)


def _phi0_slow(L):
    lg = LOG2_17 + L  # log2(17/s)
    return ilog_of_log2(lg, 2) * ilog_of_log2(lg, 4)


def ilog_of_log2(lg, k: int):
    """k-fold iterated log of x given log2(x) = lg (k >= 1), same clamping as ilog."""
    y = mpmath.mpf(lg)
    for i in range(1, k):
        y = mpmath.log(y, 2)
        if y < 1:
            y = mpmath.mpf(1)
    return y


def mu() -> FundamentalFunction:
    """t loglog(4/t); also the L loglog L Lorentz weight."""
    return FundamentalFunction("mu", lambda L: ilog_of_log2(2 + L, 2))


def from_callable(name: str, f: Callable[[float], float]) -> FundamentalFunction:
    return FundamentalFunction(name, lambda L: mpmath.mpf(f(float(2 ** -L))) * 2 ** L)


def times_slow(phi: FundamentalFunction, name: str, g: Callable) -> FundamentalFunction:
    """phi(t) * g(L) for a slowly varying factor g of L = log2(1/t)."""
    return FundamentalFunction(name, lambda L: phi.slowly(L) * g(L))


@dataclass(frozen=True)
class Rearrangement:
    """f* equals values[i] on [breakpoints[i], breakpoints[i+1])."""

    breakpoints: tuple
    values: tuple

    def blocks(self):
        return [(v, b - a) for v, a, b in zip(self.values, self.breakpoints, self.breakpoints[1:])]

    def cumulative(self, t):
        """F*(t) = integral of f* over [0, t]."""
        total = 0
        for v, a, b in zip(self.values, self.breakpoints, self.breakpoints[1:]):
            if t <= a:
                break
            total += v * (min(t, b) - a)
        return total


def distribution(f: StepFunction, lam) -> Fraction:
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return sum(1 for v in f.values if abs(v) > lam) * f.cell_length


def rearrange(f: StepFunction) -> Rearrangement:
    bps, vals = [Fraction(0)], []
    for v, m in level_profile(f):
        vals.append(v)
        bps.append(bps[-1] + m)
    return Rearrangement(tuple(bps), tuple(vals))


def lorentz_norm(f: StepFunction, phi: FundamentalFunction):
    r = rearrange(f)
    return sum(v * (phi(b) - phi(a)) for v, a, b in zip(r.values, r.breakpoints, r.breakpoints[1:]))


def marcinkiewicz_norm(f: StepFunction, phi: FundamentalFunction, grid: Sequence = ()):
    """sup_t F*(t)/phi(t) over breakpoints, t = 1 and any extra grid points."""
    r = rearrange(f)
    ts = {t for t in r.breakpoints if t > 0} | {Fraction(1)} | {t for t in grid if 0 < t <= 1}
    if not r.values:
        return 0
    return max(r.cumulative(t) / phi(t) for t in ts)


def _w_weight(l1, linf) -> float:
    if l1 <= 0:
        raise ValueError("parts must have positive L1 norm")
    if linf <= 0:
        raise ValueError("parts must have positive sup norm")
    return float(l1 * loglog(4 * mpmath.mpf(linf) / mpmath.mpf(l1)))


def w_norm_upper(parts: Sequence[tuple], ordering: Sequence[int]) -> float:
    """Sum of (1 + log2 j) ||f_j||_1 loglog(4||f_j||_inf/||f_j||_1); ordering[j-1] is the part at slot j."""
    if sorted(ordering) != list(range(len(parts))):
        raise ValueError("ordering must be a permutation of part indices")
    return float(sum((1 + mpmath.log(j, 2)) * _w_weight(*parts[i]) for j, i in enumerate(ordering, start=1)))


def w_norm_best(parts: Sequence[tuple]) -> float:
    """Minimum over orderings: heaviest part in the first slot (stable for ties)."""
    w = [_w_weight(*p) for p in parts]
    order = sorted(range(len(parts)), key=lambda i: -w[i])
    return w_norm_upper(parts, order)


def v_norm(weights: Sequence) -> float:
    a = sorted((float(x) for x in weights), reverse=True)
    if not a or min(a) < 0:
        raise ValueError("need k >= 1 nonnegative weights")
    # fsum of per-term products is order independent, so the brute force below agrees exactly
    return math.fsum(x * math.log2(j + 1) for j, x in enumerate(a, start=1))


def v_norm_brute(weights: Sequence) -> float:
    k = len(weights)
    w = [float(x) for x in weights]
    return min(math.fsum(w[j] * math.log2(s + 2) for j, s in enumerate(perm))
               for perm in itertools.permutations(range(k)))


@dataclass(frozen=True)
class GrowthResult:
    value: float
    sweep: tuple  # (log2(1/eps), value) on eps = 2^-10 .. 2^-30
    deep_increments: tuple  # increments per doubling of loglog(4/eps)
    divergent: bool


def _growth_w(phi: FundamentalFunction, w):
    # s = 4 * 2^(-2^(2^w)); integrand becomes ln2^3 * phi0/phi in the variable w.
    L = mpmath.power(2, mpmath.power(2, w)) - 2
    ref = phi0()
    return LN2 ** 3 * phi.ratio_to(ref, L)


def _w_of(eps) -> mpmath.mpf:
    return mpmath.log(mpmath.log(mpmath.log(4 / mpmath.mpf(eps), 2), 2), 2)


def growth_integral(phi: FundamentalFunction, eps, tol: float = 1e-3, depth: int = 40) -> GrowthResult:
    """Integral over [eps, 1] of phi0/phi * ds/(s log(4/s) loglog(4/s)).

    The substitution w = logloglog(4/s) maps [eps, 1] to [0, W(eps)] and turns the
    measure into ln2^3 dw. Divergence is flagged when the increment over the last
    doubling of loglog(4/eps) in a deep sweep still exceeds ``tol``.
    """
    if not 0 < eps < 1:
        raise ValueError("need 0 < eps < 1")
    g = lambda w: _growth_w(phi, w)
    value = float(mpmath.quad(g, [0, _w_of(eps)]))
    sweep = tuple((k, float(mpmath.quad(g, [0, _w_of(mpmath.mpf(2) ** -k)]))) for k in range(10, 31))
    incs = tuple(float(mpmath.quad(g, [k, k + 1])) for k in range(1, depth))
    return GrowthResult(value, sweep, incs, incs[-1] > tol)
