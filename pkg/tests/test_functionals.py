import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldexpand.errors import GenericMeasureUnsupported, UnsupportedOrder
from ldexpand.functionals import (FunctionalSpec, GenericTerm, Gamma1, apply_a1, constant, derivative_pairing,
                                  eval_functional, example1_F, functional_preset, gamma1_kernels, h_one,
                                  integral_linear, q_functional, quadratic_penalty, terminal_linear, zero)
from ldexpand.paths import PathGrid, TiltPath

T = 1.0
N = 400


def grid(f, n=N):
    return PathGrid.from_function(f, T, n)


ZERO_TILT = TiltPath.constant(0.0, T)


def test_example1_F_on_identity():
    assert eval_functional(example1_F(), grid(lambda t: t)) == pytest.approx(1 / 6, abs=1e-5)


def test_zero_path():
    for spec in (example1_F(), terminal_linear(2.0), quadratic_penalty(1.0), integral_linear(3.0)):
        assert eval_functional(spec, grid(lambda t: 0 * t)) == 0.0


def test_terminal_linear():
    assert eval_functional(terminal_linear(2.5), grid(lambda t: t)) == pytest.approx(2.5)


def test_preset_parsing():
    assert functional_preset("terminal-linear:2").name == "terminal-linear:2"
    assert functional_preset("H-one").name == "H-one"
    assert functional_preset("zero").is_zero
    with pytest.raises(KeyError):
        functional_preset("nope")


def test_pairing_example1_second_order():
    base = grid(lambda t: np.sin(t))
    d = grid(lambda t: t * (1 - t) + 0.3 * t)
    val = derivative_pairing(example1_F(), base, 2, [d, d])
    # -2 int d^2 equals the quadratic penalty with kappa = 4 evaluated on d
    assert val == pytest.approx(eval_functional(quadratic_penalty(4.0), d), rel=1e-12)


def test_pairing_terminal_first_order():
    d = grid(lambda t: 1 + t * t)
    assert derivative_pairing(terminal_linear(3.0), grid(lambda t: t), 1, [d]) == pytest.approx(6.0)


def test_pairing_third_order_of_quadratic():
    d = grid(lambda t: t)
    assert derivative_pairing(example1_F(), grid(lambda t: t), 3, [d, d, d]) == 0.0


def test_unsupported_order():
    d = grid(lambda t: t)
    with pytest.raises(UnsupportedOrder):
        derivative_pairing(example1_F(), d, 5, [d] * 5)
    g = FunctionalSpec([GenericTerm(lambda p: 0.0)], "g")
    with pytest.raises(UnsupportedOrder):
        derivative_pairing(g, d, 1, [d])


def _fd(spec, base, d, j, h=1e-3):
    f = lambda s: eval_functional(spec, PathGrid(T, base.values + s * d.values))
    if j == 1:
        return (f(h) - f(-h)) / (2 * h)
    if j == 2:
        return (f(h) - 2 * f(0) + f(-h)) / h ** 2
    if j == 3:
        return (f(2 * h) - 2 * f(h) + 2 * f(-h) - f(-2 * h)) / (2 * h ** 3)
    return (f(2 * h) - 4 * f(h) + 6 * f(0) - 4 * f(-h) + f(-2 * h)) / h ** 4


def _cubic():
    from ldexpand.functionals import IntegralTerm, TerminalTerm
    return FunctionalSpec([
        IntegralTerm(lambda t, y: np.sin(y) * (1 + t), (lambda t, y: np.cos(y) * (1 + t),
                     lambda t, y: -np.sin(y) * (1 + t), lambda t, y: -np.cos(y) * (1 + t),
                     lambda t, y: np.sin(y) * (1 + t))),
        TerminalTerm(lambda y: np.exp(0.5 * y), tuple((lambda k: (lambda y: 0.5 ** k * np.exp(0.5 * y)))(k)
                                                     for k in range(1, 5)))], "cubic")


@settings(max_examples=100, deadline=None)
@given(a=st.floats(-1, 1), b=st.floats(-1, 1), c=st.floats(-1, 1), e=st.floats(-1, 1),
       j=st.integers(1, 2), which=st.sampled_from(["example1", "terminal", "quadratic", "cubic"]))
def test_pairing_matches_finite_differences(a, b, c, e, j, which):
    spec = {"example1": example1_F(), "terminal": terminal_linear(1.5), "quadratic": quadratic_penalty(0.7),
            "cubic": _cubic()}[which]
    base = grid(lambda t: a * t + b * t * t)
    d = grid(lambda t: c * t + e * np.sin(3 * t) + 0.2)
    pair = derivative_pairing(spec, base, j, [d] * j)
    fd = _fd(spec, base, d, j)
    assert abs(pair - fd) <= 1e-4 * max(1.0, abs(pair))


def test_symmetry_and_multilinearity():
    spec = _cubic()
    base = grid(lambda t: 0.3 * t)
    ds = [grid(lambda t, k=k: np.cos(k * t) + k * t) for k in range(1, 4)]
    v = derivative_pairing(spec, base, 3, ds)
    assert derivative_pairing(spec, base, 3, ds[::-1]) == pytest.approx(v, rel=1e-14)
    scaled = [PathGrid(T, 2.5 * ds[0].values)] + ds[1:]
    assert derivative_pairing(spec, base, 3, scaled) == pytest.approx(2.5 * v, rel=1e-12)


def test_q_brownian_linear_is_zero(bm):
    x = grid(lambda t: np.sin(5 * t))
    phi = grid(lambda t: t)
    assert q_functional(2, x, terminal_linear(1.0), bm, phi, TiltPath.constant(1.0, T)) == 0.0


def test_q_brownian_quadratic(bm):
    x = grid(lambda t: np.sin(5 * t))
    q = q_functional(2, x, quadratic_penalty(2.0), bm, grid(lambda t: 0 * t), ZERO_TILT)
    assert q == pytest.approx(eval_functional(quadratic_penalty(2.0), x), rel=1e-13)


def test_q2_nonpositive_on_example1_extremal(ex1, ex1_solution):
    sol = ex1_solution
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = PathGrid(T, np.concatenate([[0.0], np.cumsum(rng.normal(0, 0.1, sol.phi0.n))]))
        assert q_functional(2, x, example1_F(), ex1, sol.phi0, sol.z0) <= 0


def test_q_requires_order_two(bm):
    with pytest.raises(ValueError):
        q_functional(1, grid(lambda t: t), zero(), bm, grid(lambda t: t), ZERO_TILT)


def test_gamma_zero_path(ex2):
    x0 = grid(lambda t: 0 * t)
    phi = grid(lambda t: 0.3 * t)
    z = TiltPath.constant(0.2, T)
    assert gamma1_kernels(1, x0, [0.7], ex2, phi, z) == 0.0
    assert gamma1_kernels(2, x0, [0.7, 0.4], ex2, phi, z) == 0.0
    x1 = grid(lambda t: np.sin(t))
    assert gamma1_kernels(3, x0, [0.7, 0.4, 0.9], ex2, phi, z) == pytest.approx(
        gamma1_kernels(3, x1, [0.7, 0.4, 0.9], ex2, phi, z))


def test_gamma_brownian_vanish(bm):
    x = grid(lambda t: np.sin(t))
    assert gamma1_kernels(2, x, [0.5, 0.5], bm, grid(lambda t: t), ZERO_TILT) == 0.0
    assert gamma1_kernels(3, x, [0.5, 0.5, 0.2], bm, grid(lambda t: t), ZERO_TILT) == 0.0


def test_gamma3_example1_zero_tilt(ex1):
    x = grid(lambda t: np.sin(t))
    assert gamma1_kernels(3, x, [0.5, 0.6, 0.7], ex1, grid(lambda t: 0 * t), ZERO_TILT) == pytest.approx(0.0, abs=1e-15)


def test_apply_a1_brownian_and_constant(bm, ex2):
    x = grid(lambda t: np.sin(t))
    assert apply_a1(example1_F(), x, bm, grid(lambda t: t), ZERO_TILT) == 0.0
    assert apply_a1(constant(3.0), x, ex2, grid(lambda t: 0.2 * t), TiltPath.constant(0.1, T)) == 0.0


def test_apply_a1_example2_terminal(ex2):
    x = grid(lambda t: np.sin(2 * t) + t)
    phi = grid(lambda t: 0.3 * t)
    z = TiltPath.constant(0.25, T)
    direct = gamma1_kernels(1, x, [T], ex2, phi, z)
    assert direct != 0.0
    assert apply_a1(terminal_linear(1.0), x, ex2, phi, z) == pytest.approx(direct, rel=1e-14)


def test_gamma1_quadrature_oracle(ex2):
    # Gamma_1^1(x; s) = 1/2 exp{int_0^s a12} int_0^s a122 x^2 dv, by scipy quad on the same integrands
    from scipy.integrate import quad
    from ldexpand.model import g0_mixed
    x = grid(lambda t: np.sin(2 * t) + t, n=4000)
    phi = grid(lambda t: 0.3 * t, n=4000)
    z = TiltPath.constant(0.25, T)
    s = 0.8
    a12 = lambda v: float(g0_mixed(ex2, v, phi(v), z(v), 1, 1))
    a122 = lambda v: float(g0_mixed(ex2, v, phi(v), z(v), 1, 2))
    ref = 0.5 * math.exp(quad(a12, 0, s)[0]) * quad(lambda v: a122(v) * (np.sin(2 * v) + v) ** 2, 0, s)[0]
    assert gamma1_kernels(1, x, [s], ex2, phi, z) == pytest.approx(ref, rel=1e-6)


def test_apply_a1_generic_rejected(ex2):
    g = FunctionalSpec([GenericTerm(lambda p: 0.0)], "g")
    with pytest.raises(GenericMeasureUnsupported):
        apply_a1(g, grid(lambda t: t), ex2, grid(lambda t: t), ZERO_TILT)


def test_h_one():
    assert eval_functional(h_one(), grid(lambda t: t)) == 1.0
