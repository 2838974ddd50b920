import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ldexpand.errors import NotApplicable, OrderAnomalous
from ldexpand.functionals import eval_functional, example1_F, integral_linear, terminal_linear, zero
from ldexpand.model import model_preset
from ldexpand.paths import PathGrid
from ldexpand.variational import (Infinite, action_s, euler_lagrange_shoot, extract_z0, maximize_direct,
                                  refine_and_extrapolate)

SHOOT_GAP = 0.0938844126776  # Example 1 shooting value (rtol 1e-12)


def test_action_zero_path(ex1):
    assert action_s(ex1, PathGrid.zeros(1.0, 50)) == 0.0


def test_action_brownian_linear(bm):
    assert action_s(bm, PathGrid.from_function(lambda t: 1.7 * t, 1.0, 50)) == pytest.approx(1.7 ** 2 / 2)


def test_action_example1_identity(ex1):
    assert action_s(ex1, PathGrid.from_function(lambda t: t, 1.0, 50)) == pytest.approx(
        math.asinh(1) + 1 - math.sqrt(2), abs=1e-12)


def test_action_infinite_variant():
    # pure unit-jump measure with only positive jumps: slopes below -mass are unreachable
    from ldexpand.model import AtomList, ProcessModel
    m = ProcessModel(0.0, 0.0, AtomList([(1.0, 1.0)]))
    val = action_s(m, PathGrid.from_function(lambda t: -2 * t, 1.0, 10))
    assert isinstance(val, Infinite)


@settings(max_examples=50, deadline=None)
@given(name=st.sampled_from(["example1", "example2", "brownian", "pide-special"]), seed=st.integers(0, 10 ** 6))
def test_action_nonnegative(name, seed):
    m = model_preset(name)
    rng = np.random.default_rng(seed)
    for _ in range(200):
        p = PathGrid(1.0, np.concatenate([[0.0], np.cumsum(rng.normal(0, 0.3, 20))]))
        s = action_s(m, p)
        assert isinstance(s, Infinite) or s >= -1e-15


def test_example1_direct(ex1, ex1_solution):
    sol = ex1_solution
    assert sol.gap > 0
    phi = sol.phi0.values
    assert np.all(np.diff(phi) > -1e-12)  # increasing
    assert np.all(np.diff(phi, 2) < 1e-12)  # concave
    assert abs(sol.phi0.slopes[-1]) < 0.02  # slope ~0 at T (first-order in dt)
    assert abs(sol.z0(1.0)) < 1e-6
    assert sol.diagnostics["multistart_spread"] < 1e-4
    assert sol.diagnostics["second_variation_max"] < 0
    assert sol.value_S >= 0
    assert sol.gap == pytest.approx(SHOOT_GAP, abs=2e-6)


def test_first_order_optimality(ex1, ex1_solution):
    sol = ex1_solution
    F = example1_F()
    rng = np.random.default_rng(1)
    J = lambda v: eval_functional(F, PathGrid(1.0, v)) - action_s(ex1, PathGrid(1.0, v))
    h = 1e-4
    for k in range(10):
        t = sol.phi0.t
        d = sum(c * np.sin((k + 0.5) * np.pi * t) for k, c in enumerate(rng.normal(0, 1, 6)))
        if k == 0:
            d = np.zeros_like(d)
            d[-1] = 1.0  # free endpoint direction
        dd = (J(sol.phi0.values + h * d) - J(sol.phi0.values - h * d)) / (2 * h)
        assert abs(dd) < 1e-6


def test_tilt_consistency(ex1, ex1_solution):
    from ldexpand.model import g0_mixed
    sol = ex1_solution
    p = sol.phi0
    resid = g0_mixed(ex1, p.t_mid, p.mid_values, sol.z0.z_mid, 1, 0) - p.slopes
    assert np.max(np.abs(resid)) < 1e-9


def test_brownian_terminal_linear(bm):
    sol = maximize_direct(terminal_linear(1.0), bm, n=100)
    np.testing.assert_allclose(sol.phi0.values, sol.phi0.t, atol=1e-9)
    assert sol.gap == pytest.approx(0.5, abs=1e-10)
    np.testing.assert_allclose(sol.z0.z_mid, 1.0, atol=1e-9)


def test_zero_functional_every_symmetric_preset():
    for name in ("example1", "example2", "brownian"):
        sol = maximize_direct(zero(), model_preset(name), n=50)
        assert sol.gap == pytest.approx(0.0, abs=1e-14)
        assert np.max(np.abs(sol.phi0.values)) < 1e-8


def test_zero_path_tilt_is_zero(ex1):
    z, _ = extract_z0(ex1, PathGrid.zeros(1.0, 20))
    assert np.all(z.z_mid == 0.0)


def test_shooting_example1(ex1):
    sol = euler_lagrange_shoot(example1_F(), ex1)
    assert sol.gap == pytest.approx(SHOOT_GAP, abs=1e-11)
    assert abs(sol.z0(1.0)) < 1e-9
    # reduced ODE phi'' = -(1 - 2 phi) sqrt(1 + phi'^2) from the closed-form H0
    p = sol.phi0
    t = p.t[1:-1]
    d2 = (p.values[2:] - 2 * p.values[1:-1] + p.values[:-2]) / p.dt ** 2
    d1 = (p.values[2:] - p.values[:-2]) / (2 * p.dt)
    rhs = -(1 - 2 * p.values[1:-1]) * np.sqrt(1 + d1 ** 2)
    assert np.max(np.abs(d2 - rhs)) < 1e-3


def test_shooting_brownian_integral_linear(bm):
    sol = euler_lagrange_shoot(integral_linear(1.0), bm)
    # phi0 = t - t^2/2, gap = int (phi - phi'^2/2) = 1/3 - 1/6 = 1/6
    np.testing.assert_allclose(sol.phi0.values, sol.phi0.t - sol.phi0.t ** 2 / 2, atol=1e-9)
    assert sol.gap == pytest.approx(1 / 6, abs=1e-9)


def test_shooting_zero(ex1):
    sol = euler_lagrange_shoot(zero(), ex1)
    assert np.max(np.abs(sol.phi0.values)) < 1e-12


def test_shooting_not_applicable(ex2):
    with pytest.raises(NotApplicable):
        euler_lagrange_shoot(example1_F(), ex2)
    with pytest.raises(NotApplicable):
        euler_lagrange_shoot(terminal_linear(1.0), model_preset("brownian"))


def test_refinement_order_example1(ex1):
    ref = refine_and_extrapolate(lambda n, prev: maximize_direct(example1_F(), ex1, n=n, previous=prev), n=100)
    assert ref.order == pytest.approx(2.0, abs=0.05)
    assert ref.extrapolated == pytest.approx(SHOOT_GAP, abs=1e-8)


def test_refinement_grid_exact(bm):
    ref = refine_and_extrapolate(lambda n, prev: maximize_direct(terminal_linear(1.0), bm, n=n, previous=prev), n=20)
    assert max(ref.gaps) - min(ref.gaps) < 1e-12
    assert ref.extrapolated == pytest.approx(0.5, abs=1e-12)


def test_refinement_constant_and_anomalous():
    class S:
        def __init__(self, gap):
            self.gap = gap
            self.phi0 = None

    ref = refine_and_extrapolate(lambda n, prev: S(0.3), n=10)
    assert ref.extrapolated == 0.3
    gaps = iter([1.0, 0.9, 0.5])  # differences grow: order < 1
    with pytest.raises(OrderAnomalous):
        refine_and_extrapolate(lambda n, prev: S(next(gaps)), n=10)


def test_workers_do_not_change_result(ex1):
    a = maximize_direct(example1_F(), ex1, n=60, workers=1)
    b = maximize_direct(example1_F(), ex1, n=60, workers=4)
    assert a.phi0.values.tobytes() == b.phi0.values.tobytes()


def test_nonunique_warning_not_raised(ex1):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        maximize_direct(example1_F(), ex1, n=40)
