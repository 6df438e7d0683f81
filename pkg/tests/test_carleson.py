import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tiletower.carleson import (BUCKETS, apply_operator, c_lac_direct, classify_pairs, column_kernel, eligible_rows,
                                inner, key_alignment, kkey_check, lac_agreement, major_set_probe, make_kernel,
                                partition_sum, phi_hat, psi, psi_k, reconstruction_constancy,
                                single_scale_domination, t_p, t_p_star)
from tiletower.cme import normal_mask
from tiletower.dyadic import DyadicInterval, StepFunction
from tiletower.setsbuild import extremal_function
from tiletower.tiles import Linearization, Tile

from conftest import built

D = DyadicInterval
KEY_PROFILE = (1, 2, 2, (5,))


@given(st.floats(-20, 20))
def test_kernel_support_and_oddness(y):
    v = float(psi(y))
    if abs(y) <= 2 or abs(y) >= 8:
        assert v == 0.0
    assert float(psi(-y)) == pytest.approx(-v, abs=1e-15)


def test_partition_of_one_over_y():
    assert float(partition_sum(0.25, -5, 20)) == pytest.approx(4.0, abs=1e-12)
    assert float(partition_sum(-0.01, -5, 30)) == pytest.approx(-100.0, abs=1e-9)
    assert float(psi_k(3, 0.5)) == pytest.approx(8 * float(psi(4.0)))


def test_kernel_tables():
    k = make_kernel()
    assert float(k.Psi(0.0)) == pytest.approx(-math.log(2), abs=1e-12)
    assert k.Psi2_total == pytest.approx(-6.0, abs=1e-9)
    assert float(k.Psi(-9)) == 0.0 and float(k.Psi(9)) == 0.0
    # integral of psi_k over an interval through the table against quadrature
    x, a, b = 0.3, 0.31, 0.9
    nodes = np.linspace(a, b, 200001)
    ref = np.trapezoid(psi_k(3, x - nodes), nodes)
    assert float(k.interval_integral(3, x, a, b)) == pytest.approx(ref, abs=1e-7)


def test_column_kernel_vanishes_far_away():
    assert float(column_kernel(0.0, 0.01, [4], 0.9)) == 0.0


def _small_tile_setup(seed=0):
    rng = np.random.default_rng(seed)
    N = Linearization(6, tuple(rng.choice([1024, 1 << 20], 64)), (1024, 1 << 20))
    P = Tile.at(D(4, 5), 1024)
    g = StepFunction(6, tuple(rng.normal(size=64) + 1j * rng.normal(size=64)))
    u = StepFunction(6, tuple(rng.normal(size=64)))
    return N, P, g, u


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_tile_operator_adjoint(seed):
    N, P, g, u = _small_tile_setup(seed)
    lhs = inner(t_p(u, P, N), g)
    rhs = inner(u, t_p_star(g, P, N))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_tile_operator_supports():
    N, P, g, u = _small_tile_setup()
    a = t_p(u, P, N)
    vals = np.abs(np.array(a.values))
    x = (np.arange(len(vals)) + 0.5) / len(vals)
    inside_E = np.array([P.time.contains_point(float(t)) and P.freq_contains(N.values[int(t * 64)]) for t in x])
    assert np.all(vals[~inside_E] == 0)
    s = np.abs(np.array(t_p_star(g, P, N).values))
    y = (np.arange(len(s)) + 0.5) / len(s)
    lo, hi = float(P.time.left) - 8 * float(P.time.length), float(P.time.right) + 8 * float(P.time.length)
    assert np.all(s[(y < lo) | (y > hi)] == 0)


def _lac_input():
    v = [0] * 256
    v[40:90] = [1] * 50
    v[150:160] = [2] * 10
    return StepFunction.exact(8, v)


@pytest.mark.parametrize("n", [3, 40])
def test_lacunary_routes_agree(n):
    rep = lac_agreement(_lac_input(), n)
    assert rep["cells"] > 200
    assert rep["max_abs_diff"] < 1e-4


def test_lacunary_sup_dominates_each_term():
    f = _lac_input()
    best = c_lac_direct(f, [1, 2, 4, 8])
    from tiletower.carleson import c_lac_single
    assert np.all(best + 1e-12 >= np.abs(c_lac_single(f, 4)))


def test_single_scale_model_is_dominated():
    f = StepFunction.exact(4, [1, 0, 2, 0, 0, 1, 3, 0, 0, 0, 1, 1, 0, 2, 0, 0])
    rep = single_scale_domination(f, [1, 2])
    assert rep["ratio_uncentered"] <= 10
    assert rep["ratio_dyadic"] <= 10


def test_phi_hat_plateau():
    assert float(phi_hat(0.05)) == 1.0 and float(phi_hat(0.1)) == 0.0
    assert 0 < float(phi_hat(0.085)) < 1


def test_reconstruction_constant():
    rep = reconstruction_constancy()
    assert rep["relative_spread"] < 0.01
    assert rep["doubling_change"] < 1e-3
    for v in rep["values"]:
        assert v == pytest.approx(rep["constant"], rel=1e-3)


@pytest.fixture(scope="module")
def key_setup():
    cme = built(*KEY_PROFILE)
    f = extremal_function(cme)
    return cme, f, apply_operator(cme, f)


def test_key_alignment(key_setup):
    cme, f, _ = key_setup
    rep = key_alignment(cme, f)
    assert len(rep.rows) > 0 and rep.vacuous == 0
    assert rep.passes(1 / 500)


@pytest.mark.parametrize("profile", [KEY_PROFILE, (1, 3, 2, (5,))])
def test_scramble_control(profile):
    # random signs should destroy the alignment for most tiles
    cme = built(*profile)
    rep = key_alignment(cme, extremal_function(cme), scramble_seed=0)
    assert rep.control_fraction(0.1) >= 0.9


def test_kkey_and_major_probe(key_setup):
    cme, f, app = key_setup
    assert kkey_check(app)["ok"]
    probe = major_set_probe(app)
    assert probe["adversarial"] > 0 and probe["random_min"] >= probe["adversarial"]


def test_bucket_partition(key_setup):
    cme, f, app = key_setup
    nm = normal_mask(cme)
    for j in range(1, cme.profile.L + 1):
        b = classify_pairs(cme, j, nm)
        assert b.min() >= 0 and b.max() < len(BUCKETS)
    assert sum(app.tile_counts.values()) == len(cme.table) * cme.profile.L
    assert set(eligible_rows(cme)) <= set(np.flatnonzero(nm))
    total = app.total()
    assert np.allclose(total, sum(app.values[b] for b in BUCKETS))
