from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tiletower.cme import build_structure
from tiletower.counting import (Field, basis_sandwich, cell_max, dyadic_bmo, extremality_experiment, jn_fit,
                                level_sets, matched_profile, maximal_dyadic, maximal_dyadic_arrays, nesting_check,
                                nu_bar, nu_bar_cme, nu_grand, nu_j, nu_j_structural, superlevel_report,
                                top_table, top_witness)
from tiletower.dyadic import DyadicInterval, StepFunction, dyadic_bmo_norm, weak_l1_norm
from tiletower.tiles import TileUniverse, classify

from conftest import built, structure_only

F = Fraction

masks = st.integers(0, 7).flatmap(lambda R: st.lists(st.booleans(), min_size=1 << R, max_size=1 << R))
fields = st.integers(0, 6).flatmap(lambda R: st.tuples(
    st.just(R), st.lists(st.integers(0, 40), min_size=1 << R, max_size=1 << R), st.integers(1, 12)))


def _field(spec):
    R, num, den = spec
    return Field(R, np.array(num, dtype=np.int64), den)


@given(masks)
def test_maximal_dyadic_partitions_the_mask(mask):
    mask = np.array(mask, dtype=bool)
    R = len(mask).bit_length() - 1
    ivs = maximal_dyadic(mask)
    cover = np.zeros(len(mask), dtype=np.int64)
    for I in ivs:
        k = R - I.scale
        cover[I.index << k:(I.index + 1) << k] += 1
        if I.scale > 0:
            p = I.parent()
            kp = R - p.scale
            assert not mask[p.index << kp:(p.index + 1) << kp].all()
    assert np.array_equal(cover, mask.astype(np.int64))
    assert [I.left for I in ivs] == sorted(I.left for I in ivs)


def test_maximal_dyadic_example():
    mask = np.array([0, 1, 1, 1, 1, 1, 1, 0], dtype=bool)
    assert [str(I) for I in maximal_dyadic(mask)] == [str(I) for I in
            (DyadicInterval(3, 1), DyadicInterval(2, 1), DyadicInterval(2, 2), DyadicInterval(3, 6))]


@given(fields)
def test_field_norms(spec):
    f = _field(spec)
    s = f.step()
    assert f.l1() == s.l1_norm()
    assert f.weak() == weak_l1_norm(s)
    assert f.weak() <= f.l1()
    t = F(7, 3)
    assert np.array_equal(f.geq(t), np.array([v >= t for v in s.values]))
    assert np.array_equal(f.gt(t), np.array([v > t for v in s.values]))


@given(fields)
def test_bmo_routes_agree(spec):
    f = _field(spec)
    assert dyadic_bmo(f.floats()) == pytest.approx(float(dyadic_bmo_norm(f.step())), abs=1e-9)


def test_cell_max():
    a = Field(1, np.array([1, 4]), 2)
    b = Field(2, np.array([1, 0, 0, 3]), 1)
    m = cell_max([a, b])
    assert m.step().values == (1, F(1, 2), 2, 3)


@pytest.mark.parametrize("L,h,s", [(1, 2, 1), (2, 3, 2)])
def test_generic_tile_route_matches_table_route(L, h, s):
    cme = built(L, h, s)
    U = TileUniverse(tuple(cme.tiles()), cme.linearization, cme.profile.N0)
    cls = classify(U)
    R = cme.resolution
    for n in sorted(cls.bins):
        a, b = nu_bar(n, cls, R), nu_bar_cme(cme, n, R)
        assert a.step() == b.step()


@pytest.mark.parametrize("L,h,s", [(1, 2, 1), (2, 2, 1), (2, 3, 2), (3, 2, 1)])
def test_structural_route_matches_tiles(L, h, s):
    cme = built(L, h, s)
    tt = top_table(cme)
    R = max(cme.resolution, int(tt["scale"].max()))
    for j in range(1, L + 1):
        assert nu_j(cme, j, R).step() == nu_j_structural(cme, j, R, tt).step()
    assert nu_grand(cme, resolution=R).step() == nu_grand(cme, structural=True, resolution=R).step()


def test_single_level_counts_tops():
    cme = built(1, 2, 1)
    nu = nu_j(cme, 1)
    # two layers sharing one top: nu is the constant 2
    assert np.all(nu.floats() == 2)
    assert nu.l1() == 2 and nu.weak() == 2


def _tree(profile):
    cme = structure_only(*profile)
    tt = top_table(cme)
    R = int(tt["scale"].max())
    flds = {j: nu_j_structural(cme, j, R, tt) for j in range(1, cme.profile.L + 1)}
    return cme, tt, flds, level_sets(flds, cme.profile.h)


@pytest.mark.parametrize("profile", [(1, 2, 1), (2, 2, 1), (2, 3, 2), (3, 2, 1), (2, 3, 2, (5, 1))])
def test_nesting_and_john_nirenberg(profile):
    _, _, _, tree = _tree(profile)
    v = nesting_check(tree)
    assert v.ok, v.failures
    assert v.jn_constant < 2 ** 10


def test_nesting_detects_overlap():
    # the finer level's component [0,1/2) half overlaps the coarser level's set [0,1/4)
    flds = {1: Field(2, np.array([1, 1, 0, 0]), 1), 2: Field(2, np.array([1, 0, 0, 0]), 1)}
    v = nesting_check(level_sets(flds, 1))
    assert not v.nesting_ok and v.failures[0][0] == "nesting"


def test_nesting_random_fields_control():
    # level sets of unrelated random fields should not come out nested
    rng = np.random.default_rng(0)
    bad = 0
    for _ in range(20):
        flds = {j: Field(6, rng.integers(0, 3, 64), 1) for j in (1, 2)}
        bad += not nesting_check(level_sets(flds, 2)).nesting_ok
    assert bad >= 15


@pytest.mark.parametrize("profile", [(1, 2, 1), (2, 3, 2), (2, 3, 2, (5, 1))])
def test_components_are_tops(profile):
    cme, tt, _, tree = _tree(profile)
    rep = top_witness(tree, cme, tt)
    assert rep["not_tiled_by_tops"] == 0
    assert rep["not_a_top"] == 0, rep["examples"]


@pytest.mark.parametrize("profile", [(1, 2, 1), (2, 2, 1), (2, 3, 2), (3, 2, 1)])
def test_basis_sandwich(profile):
    cme, tt, flds, _ = _tree(profile)
    for j, f in flds.items():
        rep = basis_sandwich(cme, j, f, tt)
        assert rep["lower"] and rep["upper"] and rep["basis_measure"] > 0


@pytest.mark.parametrize("profile", [(1, 2, 1), (2, 3, 2), (2, 2, 1), (3, 2, 1)])
def test_superlevel_sets_disjoint_across_levels(profile):
    cme = structure_only(*profile)
    rep = superlevel_report(cme)
    assert rep["disjoint_across_levels"], rep["clashes"]


def test_tail_decay():
    cme, _, flds, _ = _tree((2, 3, 2))
    fit = jn_fit(cell_max(list(flds.values())))
    assert fit["monotone"] and fit["rate"] is not None and fit["rate"] > 0


def test_matched_profiles():
    assert matched_profile(2).L == 1 and matched_profile(4).L == 4 and matched_profile(4).s == 2
    assert matched_profile(3).widths == (1, 1)


def test_extremality():
    rows = extremality_experiment([matched_profile(h) for h in (2, 3)])
    for r in rows:
        assert r["weak_le_l1"]
        assert r["ratio"] >= 1 / 3
