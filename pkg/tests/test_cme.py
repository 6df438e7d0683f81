import json

import numpy as np
import pytest

from tiletower.cme import (CmeInfeasible, ScaleProfile, build_cme, build_structure, is_normal, mass_report,
                           normal_boundary_split, normal_mask, restricted_masses, validate_cme)
from tiletower.tiles import Linearization, restricted_mass

from conftest import built


def test_profile_guard():
    with pytest.raises(CmeInfeasible, match="subdivision infeasible"):
        ScaleProfile(L=1, h=3, s=1)
    with pytest.raises(CmeInfeasible):
        ScaleProfile(L=2, h=2, s=1, widths=(1,))
    with pytest.raises(CmeInfeasible):
        ScaleProfile(L=1, h=1, s=0, sigma=9)
    ScaleProfile(L=1, h=4, s=2)


def test_generations():
    p = ScaleProfile(L=3, h=2, s=2, widths=(1, 2, 3))
    assert [p.gen(j) for j in (1, 2, 3)] == [(1, 2), (4, 6), (8, 11)]
    assert ScaleProfile.from_json(json.loads(json.dumps(p.to_json()))) == p
    assert ScaleProfile(L=1, h=4, s=2).host_layers == (1, 2)
    assert ScaleProfile(L=1, h=2, s=1).host_layers == (1,)


@pytest.mark.parametrize("L,h,s", [(1, 1, 0), (1, 2, 1), (1, 3, 2), (2, 3, 2), (2, 4, 2)])
def test_validate_passes(L, h, s):
    bad = [c for c in validate_cme(built(L, h, s)) if not c.ok]
    assert not bad, bad


@pytest.mark.parametrize("L,h,s", [(2, 2, 1), (3, 2, 1)])
def test_validate_two_layer_profiles(L, h, s):
    # two-layer towers share the tops of their final pair, so the finer levels
    # are hosted inside the deepest layer and its bases cannot stay disjoint
    checks = {c.name: c.ok for c in validate_cme(built(L, h, s))}
    others = {k: v for k, v in checks.items() if k != "deepest_bases_disjoint"}
    assert all(others.values()), others
    assert checks["deepest_bases_disjoint"]


def test_validate_exhaustive_small():
    assert all(c.ok for c in validate_cme(built(1, 2, 1), exhaustive=True))


def test_restricted_masses_match_reference():
    cme = built(2, 3, 2)
    N = cme.linearization
    counts = restricted_masses(cme)
    t = cme.table
    for i in range(0, len(t), 7):
        p = cme.tile(i)
        assert restricted_mass(p, N) * (1 << (cme.resolution - p.time.scale)) == counts[i]
        assert restricted_mass(p, N) == pytest.approx(2.0 ** -int(t.gen[i]))


def test_mass_report():
    rep = mass_report(built(2, 3, 2))
    assert rep["restricted_mass_exact"] and rep["cross_frequency_certified"] and rep["bins_match_generation"]
    assert rep["dominated_by_same_frequency_ancestor"] == 0


def test_manifest_is_deterministic():
    a = build_cme(ScaleProfile(L=2, h=3, s=2))
    b = build_cme(ScaleProfile(L=2, h=3, s=2))
    assert a.manifest() == b.manifest() and a.digest() == b.digest()
    assert a.digest() != build_cme(ScaleProfile(L=2, h=2, s=1)).digest()


def test_normal_mask_matches_reference():
    cme = built(2, 3, 2)
    nm = normal_mask(cme)
    for i in range(len(cme.table)):
        pl = cme.placements[int(cme.table.struct[i])]
        assert nm[i] == is_normal(cme.tile(i), pl.params)
    for j in (1, 2):
        normal, boundary = normal_boundary_split(cme, j)
        assert len(normal) + len(boundary) == int(np.count_nonzero(cme.table.level == j))


def test_single_layer_profile():
    cme = built(1, 1, 0)
    assert len(cme.placements) == 1
    assert isinstance(cme.linearization, Linearization)


def test_structure_without_linearization():
    cme = build_structure(ScaleProfile(L=2, h=3, s=2))
    assert cme.codes is None
    assert all(c.ok for c in validate_cme(cme))
