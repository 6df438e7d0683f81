import pytest
from hypothesis import given, strategies as st

from tiletower.dyadic import DyadicInterval
from tiletower.structures import (MultiTower, Tower, UsgtfParams, build_usgtf, comparable_pairs,
                                  comparable_pairs_brute, counting_function_sup, embeds, forest_check,
                                  is_sparse_tree, is_tree, keycompress_check, multitower_check,
                                  params_from_tiles, prec, tower_check, usgf_check)
from tiletower.tiles import Tile, tile_leq

D = DyadicInterval
A = 1 << 10


def alphas(count, start=1):
    return tuple(start << (10 * i) for i in range(count))


def test_prec():
    assert prec([D(2, 1), D(3, 7)], [D(1, 0), D(1, 1)])
    assert not prec([D(1, 0)], [D(2, 0), D(2, 1)])
    assert prec([], [D(0, 0)])


def test_usgtf_example():
    p = UsgtfParams((D(0, 0),), alphas(4, A), r=2, n=3)
    u = build_usgtf(p)
    assert p.depth == 1
    assert p.bottoms == (D(1, 0), D(1, 1))
    assert p.block(0) == alphas(2, A) and p.block(1) == alphas(4, A)[2:]
    assert sorted(u.levels) == [2, 3]
    assert len(u.levels[3]) == 4 and len(u.levels[2]) == 4
    assert all(t.time == D(0, 0) for t in u.levels[3])
    assert {t.time for t in u.levels[2]} == {D(1, 0), D(1, 1)}
    assert keycompress_check(u)
    assert usgf_check(u).ok
    assert params_from_tiles(u.tiles) == p
    assert UsgtfParams.from_json(p.to_json()) == p


def test_usgtf_guards():
    with pytest.raises(ValueError):
        UsgtfParams((D(0, 0),), alphas(3, A), 1, 3)
    with pytest.raises(ValueError):
        UsgtfParams((D(0, 0),), (A, A + 1), 1, 2)
    with pytest.raises(ValueError):
        UsgtfParams((D(1, 0), D(2, 3)), alphas(2, A), 1, 2)
    with pytest.raises(ValueError):
        UsgtfParams((D(0, 0),), alphas(2, A), 3, 2)


@given(st.integers(1, 4).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n))),
       st.lists(st.integers(0, 3), min_size=1, max_size=3, unique=True))
def test_usgtf_properties(nr, idx):
    n, r = nr
    tops = tuple(D(2, i) for i in idx)
    u = build_usgtf(UsgtfParams(tops, alphas(1 << (n - 1), A), r, n))
    assert keycompress_check(u)
    assert usgf_check(u).ok
    for top in u.levels[n]:
        assert is_tree([q for q in u.tiles if tile_leq(q, top)], top, u.tiles)
    assert len(u.constraints) == len(tops) << (n - 1)


def test_tree_examples():
    top = Tile.at(D(0, 0), A)
    kids = [Tile.at(D(1, 0), A), Tile.at(D(2, 3), A)]
    assert is_tree(kids, top)
    assert not is_tree([Tile.at(D(1, 0), 2 * A)], top)
    mid = Tile.at(D(1, 1), A)
    assert not is_tree([Tile.at(D(2, 3), A)], top, [mid, top])
    assert is_sparse_tree(kids, top, 2)
    assert not is_sparse_tree([top, Tile.at(D(1, 0), A), Tile.at(D(1, 1), A)], top, 1)


def test_forest_examples():
    t1 = Tile.at(D(1, 0), A)
    t2 = Tile.at(D(1, 1), A)
    rep = forest_check([t1, t2, Tile.at(D(2, 0), A)], n=0)
    assert len(rep.trees) == 2 and rep.separated and rep.counting_sup == 1 and rep.verdict
    stacked = [Tile.at(D(0, 0), A), Tile.at(D(0, 0), A << 10)]
    rep = forest_check(stacked, n=0)
    assert rep.counting_sup == 2 and not rep.verdict
    assert forest_check(stacked, n=1).verdict
    # 2 omega = [1000,1032) covers 10 omega_top = [1019.5,1029.5) without the tiles being comparable
    near = [Tile.at(D(0, 0), A), Tile.at(D(4, 0), A - 16)]
    assert not forest_check(near, n=3).separated


def test_counting_sup():
    assert counting_function_sup([D(1, 0), D(2, 0), D(2, 3)]) == 2
    assert counting_function_sup([]) == 0


def _two_layer_tower():
    lo = build_usgtf(UsgtfParams((D(0, 0),), alphas(2, A), 1, 2))
    hi = build_usgtf(UsgtfParams((D(1, 0), D(1, 1)), alphas(2, A << 20), 1, 2))
    return lo, hi


def test_tower_examples():
    lo, hi = _two_layer_tower()
    v = tower_check(Tower([lo, hi]))
    assert v.ok and v.height == 2 and v.basis_measure == 1
    assert tower_check(Tower([lo, hi]), exhaustive=True).ok
    clash = build_usgtf(UsgtfParams((D(1, 0), D(1, 1)), alphas(2, A), 1, 2))
    v = tower_check(Tower([lo, clash]))
    assert not v.ok and v.clause == "nocomfreq"
    loose = build_usgtf(UsgtfParams((D(0, 0),), alphas(2, A << 20), 1, 2))
    v = tower_check(Tower([lo, loose]))
    assert v.ok  # final pair may share tops
    v = tower_check(Tower([lo, loose, hi]))
    assert not v.ok and v.clause == "prec"


def test_multitower_bases():
    lo, hi = _two_layer_tower()
    other = build_usgtf(UsgtfParams((D(1, 1),), alphas(2, A << 40), 1, 2))
    v = multitower_check(MultiTower([Tower([lo, hi]), Tower([other])]))
    assert not v.ok and v.clause == "basis"
    left = build_usgtf(UsgtfParams((D(1, 0),), alphas(2, A), 1, 2))
    assert multitower_check(MultiTower([Tower([left]), Tower([other])])).ok


def test_embeds():
    fine = build_usgtf(UsgtfParams((D(3, 0),), alphas(2, A), 1, 2))
    coarse = build_usgtf(UsgtfParams((D(0, 0),), alphas(4, A), 3, 3))
    # coarse bottoms are D(0,0) itself (depth 0); tops of fine lie inside
    assert embeds(fine, coarse)
    assert not embeds(coarse, fine)
    other = build_usgtf(UsgtfParams((D(0, 0),), alphas(4, A << 40), 3, 3))
    assert not embeds(fine, other)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 7), st.integers(0, 3)), max_size=8),
       st.lists(st.tuples(st.integers(0, 3), st.integers(0, 7), st.integers(0, 3)), max_size=8))
def test_grouped_pairs_agree_with_brute(a, b):
    def mk(spec):
        return [Tile.at(D(k, i % (1 << k)), f << 20) for k, i, f in spec]
    g = [mk(a), mk(b)]
    assert bool(comparable_pairs(g)) == bool(comparable_pairs_brute(g))
