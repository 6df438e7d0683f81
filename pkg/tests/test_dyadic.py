from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from tiletower.dyadic import (DyadicInterval, MeasurableSet, StepFunction, children, dyadic_bmo_norm,
                              hl_maximal, star, subintervals, weak_l1_norm)

F = Fraction


def D(s, i):
    return DyadicInterval(s, i)


def steps(max_R=5, lo=-8, hi=8):
    return st.integers(0, max_R).flatmap(
        lambda R: st.lists(st.integers(lo, hi), min_size=1 << R, max_size=1 << R).map(
            lambda v: StepFunction.exact(R, [F(x, 4) for x in v])))


intervals = st.integers(0, 12).flatmap(lambda s: st.integers(0, (1 << s) - 1).map(lambda i: D(s, i)))


def test_children_examples():
    assert children(D(0, 0)) == (D(1, 0), D(1, 1))
    assert children(D(1, 1)) == (D(2, 2), D(2, 3))
    assert children(D(3, 5)) == (D(4, 10), D(4, 11))


def test_subintervals_examples():
    assert subintervals(D(0, 0), 2) == [D(2, i) for i in range(4)]
    assert subintervals(D(3, 5), 0) == [D(3, 5)]
    assert subintervals(D(1, 1), 1) == [D(2, 2), D(2, 3)]


def test_star_examples():
    a, b = star(D(0, 0))
    assert (a.lo, a.hi, b.lo, b.hi) == (-8, -1, 2, 9)
    a, b = star(D(1, 0))
    assert (a.lo, a.hi, b.lo, b.hi) == (-4, F(-1, 2), 1, F(9, 2))


@given(intervals)
def test_interval_invariants(I):
    assert I.length * (1 << I.scale) == 1
    c0, c1 = children(I)
    assert c0.parent() == I and c1.parent() == I
    assert c0.length + c1.length == I.length and c0.right == c1.left
    a, b = star(I)
    assert a.length + b.length == 14 * I.length


@given(intervals, st.integers(0, 4))
def test_subintervals_partition(I, m):
    parts = subintervals(I, m)
    assert sum(p.length for p in parts) == I.length
    assert parts[0].left == I.left and parts[-1].right == I.right
    assert all(p.right == q.left for p, q in zip(parts, parts[1:]))
    assert all(I.contains(p) for p in parts)


@given(intervals, intervals)
def test_nested_or_disjoint(I, J):
    assert I.contains(J) or J.contains(I) or I.disjoint(J)


def test_weak_norm_examples():
    assert weak_l1_norm(StepFunction.exact(1, [1, 0])) == F(1, 2)
    f = StepFunction.exact(3, [4, 2, 2, 1, 1, 1, 1, 0])
    assert weak_l1_norm(f) == F(7, 8)
    assert weak_l1_norm(StepFunction.exact(2, [0] * 4)) == 0


def test_bmo_examples():
    assert dyadic_bmo_norm(StepFunction.exact(3, [5] * 8)) == 0
    assert dyadic_bmo_norm(StepFunction.exact(1, [1, 0])) == F(1, 2)


def test_maximal_examples():
    assert hl_maximal(StepFunction.exact(2, [1] * 4)).values == (1, 1, 1, 1)
    m = hl_maximal(StepFunction.exact(2, [1, 0, 0, 0]))
    assert m.values[2] == F(1, 4) and m.values[3] == F(1, 4)


@given(steps())
def test_weak_le_l1(f):
    assert weak_l1_norm(f) <= f.l1_norm()


@given(st.integers(0, 6).flatmap(lambda R: st.lists(st.booleans(), min_size=1 << R, max_size=1 << R)))
def test_weak_norm_of_indicator(mask):
    R = len(mask).bit_length() - 1
    f = StepFunction.exact(R, [1 if b else 0 for b in mask])
    assert weak_l1_norm(f) == F(sum(mask), 1 << R)


@given(steps(), st.integers(-3, 3))
def test_bmo_shift_and_scale(f, c):
    base = dyadic_bmo_norm(f)
    assert dyadic_bmo_norm(f.shift(c)) == base
    assert dyadic_bmo_norm(f.scale(c)) == abs(c) * base


@given(steps())
def test_maximal_dominates(f):
    m = hl_maximal(f)
    assert all(a >= abs(v) for a, v in zip(m.values, f.values))


@given(steps(), st.integers(0, 3))
def test_refinement_preserves_norms(f, extra):
    g = f.refine(f.resolution + extra)
    assert g.l1_norm() == f.l1_norm() and g.integral() == f.integral()
    assert weak_l1_norm(g) == weak_l1_norm(f)


sets = st.integers(0, 5).flatmap(lambda R: st.lists(st.integers(0, (1 << R) - 1), max_size=1 << R).map(
    lambda c: MeasurableSet(R, tuple(c))))


@given(sets, sets)
def test_set_algebra(A, B):
    assert A.union(B).measure + A.intersection(B).measure == A.measure + B.measure
    assert A.difference(B).measure == A.measure - A.intersection(B).measure


def test_json_round_trip():
    f = StepFunction.exact(2, [F(1, 3), 0, 2, -1])
    assert StepFunction.from_json(f.to_json()) == f
    A = MeasurableSet(3, (1, 5, 6))
    assert MeasurableSet.from_json(A.to_json()) == A


def test_bad_index_rejected():
    with pytest.raises(ValueError):
        D(2, -1)
