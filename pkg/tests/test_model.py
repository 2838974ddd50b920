import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldexpand.errors import CumulantOverflow, UnsupportedOrder
from ldexpand.model import (AtomList, Coefficient, Density, ProcessModel, check_assumptions, cumulant_g0,
                            cumulant_geps, g0_mixed, g0_partials, model_preset, tilted_moments)

PRESETS = ["example1", "example2", "brownian", "pide-special"]


def test_example1_cumulant_at_one(ex1):
    assert cumulant_g0(ex1, 0.0, 0.0, 1.0) == pytest.approx(math.cosh(1) - 1, abs=1e-15)


@pytest.mark.parametrize("name", PRESETS)
def test_cumulant_vanishes_at_zero(name):
    m = model_preset(name)
    x = np.linspace(-3, 3, 13)
    assert np.all(cumulant_g0(m, 0.3, x, 0.0) == 0.0)


def test_brownian_cumulant(bm):
    assert cumulant_g0(bm, 0.0, 1.0, 3.0) == pytest.approx(4.5)


def test_geps_example1(ex1):
    # direct formula: eps^-1 * 1/2 (e^{eps z} + e^{-eps z} - 2)
    direct = (0.5 * (math.exp(1.0) + math.exp(-1.0)) - 1) / 0.5
    assert cumulant_geps(ex1, 0.0, 0.0, 2.0, 0.5) == pytest.approx(direct, rel=1e-14)
    assert cumulant_geps(ex1, 0.0, 0.0, 2.0, 0.5) == pytest.approx(1.086161, abs=1e-6)


def test_geps_brownian_is_quadratic(bm):
    # eps^-1 G0(eps z) = eps z^2 / 2 for a = 1: the per-unit-time cumulant of variance eps
    for eps in (1.0, 0.3, 0.01):
        assert cumulant_geps(bm, 0.0, 0.0, 1.7, eps) == pytest.approx(0.5 * eps * 1.7 ** 2, rel=1e-14)


@pytest.mark.parametrize("name", PRESETS)
@pytest.mark.parametrize("eps", [1.0, 0.1, 0.01])
def test_scaling_identity(name, eps):
    m = model_preset(name)
    z = np.linspace(-4, 4, 17)
    lhs = eps * cumulant_geps(m, 0.2, 0.7, z, eps)
    rhs = cumulant_g0(m, 0.2, 0.7, eps * z)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-300)


def test_partials_example1_at_zero(ex1):
    p = g0_partials(ex1, 0.0, 0.0, 0.0)
    assert p.dz == 0.0
    assert p.dzz == pytest.approx(1.0)


def test_example2_mixed_partial_zero_at_z0(ex2):
    x = np.linspace(-3, 3, 11)
    assert np.allclose(g0_mixed(ex2, 0.0, x, 0.0, 1, 1), 0.0, atol=1e-15)
    # by hand: d/dx d/dz [r(x)(e^z - 1) + l(x)(e^-z - 1)] = cos(x)(e^z - e^-z)
    z = 0.7
    np.testing.assert_allclose(g0_mixed(ex2, 0.0, x, z, 1, 1), np.cos(x) * (math.exp(z) - math.exp(-z)), rtol=1e-12)


def test_brownian_x_partials_vanish(bm):
    p = g0_partials(bm, 0.0, 1.3, 0.8, order=4)
    assert all(np.all(d == 0) for d in p.dxn)


def test_tilted_moments_example1(ex1):
    assert tilted_moments(ex1, 0.0, 0.0, 0.0, 2).alpha == pytest.approx(1.0)
    m3 = tilted_moments(ex1, 0.0, 0.0, 0.0, 3)
    assert m3.alpha == pytest.approx(0.0, abs=1e-15)
    assert m3.beta == pytest.approx(1.0)


def test_tilted_moments_no_jumps(bm):
    for j in (3, 4, 5):
        m = tilted_moments(bm, 0.0, 0.0, 0.5, j)
        assert m.alpha == 0 and m.beta == 0


def test_alpha1_is_dz(ex2):
    z = 0.4
    assert tilted_moments(ex2, 0.1, 0.3, z, 1).alpha == pytest.approx(g0_mixed(ex2, 0.1, 0.3, z, 1, 0))


def test_check_assumptions_example1(ex1):
    rep = check_assumptions(ex1, (0.0, 1.0), (-2.0, 2.0), (-3.0, 3.0))
    assert rep.convexity_violations == 0
    assert rep.min_d2g_dz2 == pytest.approx(1.0)
    assert rep.ok


def test_check_assumptions_brownian(bm):
    rep = check_assumptions(bm)
    assert rep.min_d2g_dz2 == pytest.approx(1.0)
    assert rep.max_abs_d2g_dzdx == 0.0


def test_check_assumptions_example2(ex2):
    rep = check_assumptions(ex2, x_range=(-5, 5))
    assert math.isfinite(rep.max_abs_d2g_dzdx)
    assert rep.convexity_violations == 0


def test_overflow_is_reported(ex1):
    with pytest.raises(CumulantOverflow):
        cumulant_g0(ex1, 0.0, 0.0, 1e4)


def test_unsupported_order_without_derivatives():
    c = Coefficient(lambda t, x: np.sin(x) + 2.0)
    m = ProcessModel(0.0, 0.0, AtomList([(1.0, c)]))
    with pytest.raises(UnsupportedOrder):
        g0_mixed(m, 0.0, 0.0, 0.5, 0, 3)
    # orders 1 and 2 fall back to central differences
    np.testing.assert_allclose(g0_mixed(m, 0.0, 0.4, 0.5, 0, 1), math.cos(0.4) * (math.exp(0.5) - 1 - 0.5), rtol=1e-8)


def test_density_matches_atoms_on_polynomial():
    # rho = u^2 on [-1, 1]: int (e^{zu} - 1 - zu) u^2 du by high-order quadrature vs 32 nodes
    m = model_preset("pide-special")
    from scipy.integrate import quad
    z = 1.3
    ref = quad(lambda u: (math.exp(z * u) - 1 - z * u) * u * u, -1, 1, epsabs=1e-14)[0]
    val = cumulant_g0(m, 0.0, 0.0, z) - z * 0.2 * math.sin(0.0) - 0.5 * z * z
    assert val == pytest.approx(ref, rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(name=st.sampled_from(PRESETS), t=st.floats(0, 1), x=st.floats(-3, 3),
       z1=st.floats(-4, 4), z2=st.floats(-4, 4), lam=st.floats(0, 1))
def test_convexity_in_z(name, t, x, z1, z2, lam):
    m = model_preset(name)
    zm = lam * z1 + (1 - lam) * z2
    lhs = float(cumulant_g0(m, t, x, zm))
    rhs = lam * float(cumulant_g0(m, t, x, z1)) + (1 - lam) * float(cumulant_g0(m, t, x, z2))
    assert lhs <= rhs + 1e-12 * max(1.0, abs(rhs))


@settings(max_examples=100, deadline=None)
@given(name=st.sampled_from(PRESETS), x=st.floats(-2, 2), z=st.floats(-3, 3))
def test_z_partials_match_finite_differences(name, x, z):
    m = model_preset(name)
    h = 1e-5
    g = lambda zz: float(cumulant_g0(m, 0.3, x, zz))
    fd1 = (g(z + h) - g(z - h)) / (2 * h)
    d1 = float(g0_mixed(m, 0.3, x, z, 1, 0))
    if abs(d1) > 1e-3:
        assert abs(fd1 - d1) / abs(d1) < 1e-6
    dg = lambda zz: float(g0_mixed(m, 0.3, x, zz, 1, 0))
    fd2 = (dg(z + h) - dg(z - h)) / (2 * h)
    d2 = float(g0_mixed(m, 0.3, x, z, 2, 0))
    assert d2 >= 0
    if abs(d2) > 1e-3:
        assert abs(fd2 - d2) / abs(d2) < 1e-6


def test_unknown_preset():
    with pytest.raises(KeyError):
        model_preset("nope")


def test_density_nonconstant_path():
    d = Density(lambda t, x, u: (1 + 0.1 * x) * np.ones_like(u), 1.0, 8)
    u, w = d.nodes_weights(0.0, np.array([0.0, 1.0]))
    np.testing.assert_allclose(w.sum(axis=0), [2.0, 2.2])
