import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import h0_closed
from ldexpand.errors import NonConvexDetected, Unbounded
from ldexpand.legendre import dh0_du, h0, h0_array, h_inequality_check, h_inequality_margin, legendre_sup
from ldexpand.model import cumulant_g0, model_preset


def test_cosh_at_one():
    r = legendre_sup(lambda z: math.cosh(z) - 1, 1.0, dg=math.sinh, d2g=math.cosh)
    assert r.value == pytest.approx(math.log(1 + math.sqrt(2)) + 1 - math.sqrt(2), abs=1e-12)
    assert r.argmax_z == pytest.approx(math.asinh(1.0), abs=1e-12)
    # dense grid maximization as an independent oracle
    z = np.linspace(-3, 3, 600001)
    assert r.value == pytest.approx(np.max(z - (np.cosh(z) - 1)), abs=1e-10)
    assert r.converged


def test_u_zero():
    r = legendre_sup(lambda z: z ** 4 / 4 + z * z / 2, 0.0, dg=lambda z: z ** 3 + z)
    assert r.value == 0.0 and r.argmax_z == 0.0


def test_quadratic_self_dual():
    r = legendre_sup(lambda z: z * z / 2, 2.0, dg=lambda z: z, d2g=lambda z: 1.0)
    assert r.value == pytest.approx(2.0) and r.argmax_z == pytest.approx(2.0)


def test_fd_derivative_fallback():
    r = legendre_sup(lambda z: np.cosh(z) - 1, 0.5)
    assert r.value == pytest.approx(h0_closed(0.5), abs=1e-8)


def test_nonconvex_detected():
    with pytest.raises(NonConvexDetected):
        legendre_sup(lambda z: -z * z, 1.0, dg=lambda z: -2 * z)


def test_unbounded_outside_slope_range(ex1):
    # a = 0 with unit jumps: velocities are unbounded in u but here the tilted range is all of R;
    # a bounded-derivative conjugand gives Unbounded
    with pytest.raises(Unbounded):
        legendre_sup(lambda z: np.log(np.cosh(z)), 2.0, dg=np.tanh)


def test_example1_values(ex1):
    assert h0(ex1, 0.0, 0.0, 0.0).value == 0.0
    assert h0(ex1, 0.0, 0.0, -1.0).value == pytest.approx(0.467160, abs=1e-6)
    assert dh0_du(ex1, 0.0, 0.0, 0.0) == 0.0
    assert dh0_du(ex1, 0.0, 0.0, 1.0) == pytest.approx(math.asinh(1.0), abs=1e-12)


def test_brownian_values(bm):
    assert h0(bm, 0.0, 0.0, 1.3).value == pytest.approx(0.5 * 1.3 ** 2, abs=1e-13)
    assert dh0_du(bm, 0.0, 0.0, 0.7) == pytest.approx(0.7, abs=1e-13)


def test_closed_form_grid(ex1):
    u = np.round(np.arange(-500, 501) * 0.01, 12)
    val, z, status = h0_array(ex1, 0.0, 0.0, u)
    assert np.all(status == 0)
    assert np.max(np.abs(val - h0_closed(u))) < 1e-10
    np.testing.assert_allclose(z, np.arcsinh(u), atol=1e-10)


def test_h_inequality_points():
    assert h_inequality_margin(0.0, 0.0) == pytest.approx(math.sqrt(2) - 1)
    # RHS at p = 1 is ln(1 + sqrt2) + 1 - 2 sqrt2, so the margin is exactly sqrt2
    m1 = h_inequality_margin(1.0, h0_closed(1.0))
    assert m1 == pytest.approx(math.sqrt(2), abs=1e-14) and m1 > 0


def test_h_inequality_grid():
    u = np.round(np.arange(-1000, 1001) * 0.01, 12)
    assert h_inequality_check(u) >= 0


def test_bidual_brownian(bm):
    # conjugate of H0(u) = u^2/2 evaluated on z in [-5, 5] returns z^2/2
    z = np.linspace(-5, 5, 101)
    back = [legendre_sup(lambda u: float(h0(bm, 0, 0, float(u)).value), float(zz),
                         dg=lambda u: dh0_du(bm, 0, 0, u)).value for zz in z]
    np.testing.assert_allclose(back, z * z / 2, atol=1e-10)


@settings(max_examples=300, deadline=None)
@given(name=st.sampled_from(["example1", "example2", "brownian", "pide-special"]),
       u=st.floats(-4, 4), z=st.floats(-4, 4), x=st.floats(-2, 2))
def test_fenchel_young(name, u, z, x):
    m = model_preset(name)
    H = h0(m, 0.5, x, u).value
    assert H + float(cumulant_g0(m, 0.5, x, z)) >= u * z - 1e-12


def test_fenchel_young_bulk():
    rng = np.random.default_rng(7)
    for name in ("example1", "example2", "brownian", "pide-special"):
        m = model_preset(name)
        u = rng.uniform(-5, 5, 2500)
        z = rng.uniform(-5, 5, 2500)
        x = rng.uniform(-3, 3, 2500)
        t = rng.uniform(0, 1, 2500)
        val, _, status = h0_array(m, t, x, u)
        assert np.all(status == 0)
        assert np.min(val + cumulant_g0(m, t, x, z) - u * z) >= -1e-12


@settings(max_examples=100, deadline=None)
@given(u=st.floats(-3, 3))
def test_envelope(u):
    m = model_preset("example1")
    h = 1e-5
    fd = (h0(m, 0, 0, u + h).value - h0(m, 0, 0, u - h).value) / (2 * h)
    assert fd == pytest.approx(dh0_du(m, 0, 0, u), abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(u1=st.floats(-4, 4), u2=st.floats(-4, 4))
def test_argmax_monotone(u1, u2):
    m = model_preset("example2")
    lo, hi = sorted((u1, u2))
    assert dh0_du(m, 0, 0.3, lo) <= dh0_du(m, 0, 0.3, hi) + 1e-12
