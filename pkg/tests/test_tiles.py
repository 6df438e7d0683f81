from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from tiletower.dyadic import DyadicInterval
from tiletower.tiles import (Linearization, Tile, TileUniverse, classify, damping, dilate_freq, e_set, mass,
                             mass_bin, restricted_mass, tile_dilate, tile_leq, tile_lt)

F = Fraction
D = DyadicInterval


@st.composite
def tiles(draw, max_scale=4, max_alpha_blocks=8):
    k = draw(st.integers(0, max_scale))
    i = draw(st.integers(0, (1 << k) - 1))
    b = draw(st.integers(0, max_alpha_blocks))
    return Tile(D(k, i), D(-k, b))


def test_area_one():
    with pytest.raises(ValueError):
        Tile(D(2, 0), D(-1, 0))
    with pytest.raises(ValueError):
        Tile.at(D(2, 0), 3)
    p = Tile.at(D(2, 1), 8)
    assert (p.alpha, p.width) == (8, 4)
    assert p.freq_contains(11) and not p.freq_contains(12)


def test_order_examples():
    big = Tile.at(D(0, 0), 5)
    small = Tile.at(D(1, 0), 4)
    assert tile_leq(small, big) and tile_lt(small, big)
    assert not tile_leq(big, small)
    assert tile_leq(big, big) and not tile_lt(big, big)
    assert not tile_leq(Tile.at(D(1, 0), 6), big)


@given(tiles(), tiles(), tiles())
def test_partial_order(p, q, r):
    assert tile_leq(p, p)
    if tile_leq(p, q) and tile_leq(q, p):
        assert p == q
    if tile_leq(p, q) and tile_leq(q, r):
        assert tile_leq(p, r)
    assert tile_lt(p, q) == (tile_leq(p, q) and p != q)


def test_dilation_examples():
    p = Tile.at(D(1, 1), 4)
    I, w = tile_dilate(3, p)
    assert I == p.time
    assert (w.lo, w.hi) == (2, 8)
    assert (dilate_freq(10, p).lo, dilate_freq(10, p).hi) == (-5, 15)
    with pytest.raises(ValueError):
        tile_dilate(0, p)


def test_e_set_and_restricted_mass():
    N = Linearization(2, (0, 1024, 1024, 0), (0, 1024))
    p = Tile.at(D(0, 0), 1024)
    assert restricted_mass(p, N) == F(1, 2)
    assert e_set(p, N).measure == F(1, 2)
    q = Tile.at(D(1, 0), 1024)
    assert restricted_mass(q, N) == F(1, 2)
    assert restricted_mass(Tile.at(D(3, 2), 1024), N) == 1
    assert restricted_mass(Tile.at(D(3, 0), 1024), N) == 0


@given(tiles(max_scale=5, max_alpha_blocks=40), st.lists(st.sampled_from([0, 1024, 1 << 20]), min_size=16, max_size=16))
def test_restricted_mass_matches_e_set(p, vals):
    N = Linearization(4, tuple(vals), (0, 1024, 1 << 20))
    assert restricted_mass(p, N) == e_set(p, N).measure / p.time.length


def test_linearization_guards():
    with pytest.raises(ValueError):
        Linearization(1, (1, 5), (1, 5))
    with pytest.raises(ValueError):
        Linearization(1, (0, 3), (0, 1024))
    with pytest.raises(ValueError):
        Linearization(1, (0,), (0,))
    assert Linearization.from_codes(1, [1, 0], [1024, 0]).values == (1024, 0)


def test_damping():
    p = Tile.at(D(0, 0), 0)
    assert damping(p, p, 10) == 1
    far = Tile.at(D(0, 0), 100)
    # 10 omega_p = [-4.5, 5.5), 10 omega_q = [95.5, 105.5): gap 90
    assert damping(p, far, 2) == F(1, 91 ** 2)


def test_damping_lifts_mass():
    N = Linearization(1, (4096, 0), (0, 4096))
    top = Tile.at(D(0, 0), 4096)
    low = Tile.at(D(1, 1), 4096)
    U = TileUniverse((top, low), N, N0=10)
    assert U.r_mass(low) == 0
    assert mass(low, U) == F(1, 2)
    off = Tile.at(D(1, 1), 4096 + 2 * 2048)
    U2 = TileUniverse((top, off), N, N0=10)
    assert 0 < mass(off, U2) <= F(1, 2) * F(2) ** -10


def test_mass_bin():
    assert mass_bin(F(1)) == 0
    assert mass_bin(F(1, 2)) == 1
    assert mass_bin(F(3, 8)) == 1
    assert mass_bin(F(1, 8)) == 3
    for bad in (0, F(3, 2)):
        with pytest.raises(ValueError):
            mass_bin(bad)


@given(st.fractions(min_value=F(1, 10 ** 6), max_value=1))
def test_mass_bin_property(a):
    n = mass_bin(a)
    assert F(1, 2 ** (n + 1)) < a <= F(1, 2 ** n)


def test_classify_bins():
    N = Linearization(3, (4096,) * 2 + (0,) * 6, (0, 4096))
    tiles = [Tile.at(D(0, 0), 4096), Tile.at(D(2, 0), 4096), Tile.at(D(3, 7), 4096), Tile.at(D(0, 0), 0)]
    U = TileUniverse(tuple(tiles), N, N0=10)
    c = classify(U)
    assert Tile.at(D(0, 0), 0) in c.p_zero
    assert Tile.at(D(0, 0), 4096) in c.bins[2]
    # the small tile inherits the top's mass through the zero-distance damping factor
    assert Tile.at(D(2, 0), 4096) in c.bins[0]
    assert Tile.at(D(3, 7), 4096) in c.bins[2]
    assert c.maximal[2] == [Tile.at(D(0, 0), 4096)]
    s = c.summary()
    assert s["P(0)"] == 1 and s["P0bar"] == 0
