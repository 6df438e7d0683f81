from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tiletower.dyadic import DyadicInterval, StepFunction, weak_l1_norm
from tiletower.walsh import (WalshBitile, boundary_cancellation, c_aw, c_w, coefficient_numerators,
                             difference_identity, packet_norm_squared, partial_sum_bitile, partial_sum_direct,
                             partial_sum_routes_agree, product_identity, rademacher, recursions_check,
                             single_scale_model, walsh, walsh_at)

F = Fraction
D = DyadicInterval

step_functions = st.integers(1, 5).flatmap(
    lambda R: st.lists(st.integers(-8, 8).map(lambda k: F(k, 8)), min_size=1 << R, max_size=1 << R).map(
        lambda v: StepFunction.exact(R, v)))


def test_walsh_examples():
    assert list(walsh(0, 2)) == [1, 1, 1, 1]
    assert list(walsh(1, 2)) == [1, 1, -1, -1]
    assert list(walsh(2, 2)) == [1, -1, 1, -1]
    assert list(walsh(3, 2)) == [1, -1, -1, 1]
    assert walsh_at(1, F(3, 4)) == -1 and walsh_at(1, F(1, 2)) == 0 and walsh_at(5, 1) == 0
    with pytest.raises(ValueError):
        walsh(4, 2)


@pytest.mark.parametrize("R", [3, 5])
def test_grid_matches_pointwise_definition(R):
    for n in range(1 << R):
        grid = walsh(n, R)
        assert all(grid[c] == walsh_at(n, F(2 * c + 1, 1 << (R + 1))) for c in range(1 << R))


def test_orthonormal():
    R = 5
    W = np.stack([walsh(n, R).astype(np.int64) for n in range(1 << R)])
    assert np.array_equal(W @ W.T, (1 << R) * np.eye(1 << R, dtype=np.int64))


@given(st.integers(0, 63), st.integers(0, 63))
def test_xor_multiplicativity(m, n):
    assert np.array_equal(walsh(m, 6) * walsh(n, 6), walsh(m ^ n, 6))


def test_rademacher():
    assert np.array_equal(rademacher(0, 3), walsh(1, 3))
    assert list(rademacher(2, 3)) == [1, -1] * 4


@given(st.integers(0, 3), st.integers(0, 7), st.integers(0, 7))
def test_bitile_recursions(j, l, m):
    b = WalshBitile(D(j, l % (1 << j)), m)
    assert recursions_check(b, 9)


def test_packet_norms():
    for n, l, j in [(0, 0, 0), (3, 1, 2), (5, 6, 3)]:
        assert packet_norm_squared(n, l, j, 8) == 1
    with pytest.raises(ValueError):
        packet_norm_squared(0, 4, 2, 8)


@pytest.mark.parametrize("L", range(1, 7))
def test_product_identity(L):
    assert product_identity(L)
    assert product_identity(L, L + 2)


@given(step_functions)
def test_partial_sum_routes(f):
    n_max = (1 << f.resolution) - 1
    assert partial_sum_routes_agree(f, n_max)
    for n in {0, n_max // 2, n_max}:
        assert partial_sum_direct(f, n) == partial_sum_bitile(f, n)
    assert partial_sum_direct(f, n_max) == f


def test_partial_sum_examples():
    f = StepFunction.exact(2, [1, 0, 0, 0])
    assert partial_sum_direct(f, 0).values == (F(1, 4),) * 4
    assert partial_sum_direct(f, 1).values == (F(1, 2), F(1, 2), 0, 0)


@pytest.mark.parametrize("L,M", [(4, 2), (5, 3), (3, 1)])
def test_difference_identity(L, M):
    rng = np.random.default_rng(L * 10 + M)
    for _ in range(4):
        f = StepFunction.exact(L, [F(int(k), 8) for k in rng.integers(-8, 9, 1 << L)])
        assert difference_identity(f, L, M)
    with pytest.raises(ValueError):
        difference_identity(f, L, L)


def test_single_scale_is_dyadic_average():
    f = StepFunction.exact(3, [1, 3, 0, 0, 2, 2, 5, 1])
    assert single_scale_model(f, 1).values == (F(1),) * 4 + (F(5, 2),) * 4
    assert single_scale_model(f, 2).values == (2, 2, 0, 0, 2, 2, 3, 3)


def test_c_w_examples():
    f = StepFunction.exact(2, [1, 0, 0, 0])
    g = c_w(f, [0, 1, 3])
    assert g.values == (1, F(1, 2), F(1, 4), F(1, 4))
    with pytest.raises(ValueError):
        c_w(f, [4])


@given(step_functions)
def test_c_w_is_weak_bounded(f):
    R = f.resolution
    seq = [(1 << k) - 1 for k in range(R + 1)]
    g = c_w(f, seq)
    assert weak_l1_norm(g) <= 4 * f.l1_norm()
    for n in seq:
        assert all(abs(a) <= b for a, b in zip(partial_sum_direct(f, n).values, g.values))


def test_analytic_walsh_model_runs():
    f = StepFunction.exact(4, [1] * 4 + [0] * 12)
    v = c_aw(f, [1, 3, 7])
    assert v.shape == (16,) and np.all(np.isfinite(v)) and v.max() > 0


def test_column_separation():
    rep = boundary_cancellation(r=11, R=16, heights=(1, 8))
    assert rep.separation(8) >= 2
