"""Path functionals F and H, their derivative measures, Q(n, .) and the A1 kernels.

Builtin functionals are sums of

* integral terms ``int_0^T g(t, phi(t)) dt`` whose j-th derivative measure is
  the density ``d^j g / dy^j (t, phi(t))`` on the diagonal of [0, T]^j, and
* terminal terms ``h(phi(T))`` whose j-th derivative measure is the point
  mass ``h^(j)(phi(T))`` at (T, ..., T).

Everything is evaluated on path skeletons with the trapezoid rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GenericMeasureUnsupported, UnsupportedOrder
from .model import ProcessModel, g0_mixed
from .paths import PathGrid, SamplePath, path_values_like, segments, terminal_value

MAX_ORDER = 4


def _as_array(v, like):
    return np.asarray(v, dtype=float) + np.zeros_like(like, dtype=float)


@dataclass
class IntegralTerm:
    """int_0^T g(t, y(t)) dt with y-derivatives ``derivs = [g_y, g_yy, ...]``."""

    g: Callable
    derivs: Sequence[Callable] = ()
    name: str = ""

    def value(self, t, y, n: int = 0):
        if n == 0:
            return _as_array(self.g(t, y), y)
        if n > len(self.derivs):
            raise UnsupportedOrder(f"integral term {self.name!r} has derivatives up to order {len(self.derivs)}")
        return _as_array(self.derivs[n - 1](t, y), y)


@dataclass
class TerminalTerm:
    """h(y(T)) with derivatives ``derivs = [h', h'', ...]``."""

    h: Callable
    derivs: Sequence[Callable] = ()
    name: str = ""

    def value(self, y, n: int = 0):
        if n == 0:
            return _as_array(self.h(y), y)
        if n > len(self.derivs):
            raise UnsupportedOrder(f"terminal term {self.name!r} has derivatives up to order {len(self.derivs)}")
        return _as_array(self.derivs[n - 1](y), y)


@dataclass
class GenericTerm:
    """Opaque functional with user-supplied derivative pairings.

    ``pairing(j, base, directions)`` must return the j-th derivative at
    ``base`` paired with the j direction paths, or raise UnsupportedOrder.
    """

    evaluate: Callable
    pairing: Optional[Callable] = None
    name: str = "generic"


@dataclass
class FunctionalSpec:
    terms: list = field(default_factory=list)
    name: str = ""

    @property
    def integral_terms(self):
        return [s for s in self.terms if isinstance(s, IntegralTerm)]

    @property
    def terminal_terms(self):
        return [s for s in self.terms if isinstance(s, TerminalTerm)]

    @property
    def generic_terms(self):
        return [s for s in self.terms if isinstance(s, GenericTerm)]

    @property
    def is_builtin(self) -> bool:
        return not self.generic_terms

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def integrand(self, t, y, n: int = 0):
        """Sum of d^n g / dy^n over integral terms."""
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(np.asarray(t), y).shape)
        for s in self.integral_terms:
            out = out + s.value(t, y, n)
        return out

    def terminal(self, y, n: int = 0):
        """Sum of d^n h / dy^n over terminal terms."""
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.shape)
        for s in self.terminal_terms:
            out = out + s.value(y, n)
        return out

    def __add__(self, other: "FunctionalSpec") -> "FunctionalSpec":
        return FunctionalSpec(list(self.terms) + list(other.terms), f"{self.name}+{other.name}")


def _trapezoid(t0, t1, f0, f1):
    return float(np.sum(0.5 * (t1 - t0) * (f0 + f1)))


def eval_functional(spec: FunctionalSpec, path) -> float:
    """F(path): trapezoid between skeleton points plus terminal terms."""
    total = 0.0
    if spec.integral_terms:
        t0, t1, v0, v1 = segments(path)
        total += _trapezoid(t0, t1, spec.integrand(t0, v0), spec.integrand(t1, v1))
    if spec.terminal_terms:
        total += float(spec.terminal(terminal_value(path)))
    for g in spec.generic_terms:
        total += float(g.evaluate(path))
    return total


def derivative_pairing(spec: FunctionalSpec, base, j: int, directions) -> float:
    """F^(j)(base)(d_1, ..., d_j) for the diagonal/terminal derivative measures."""
    if j < 1:
        raise ValueError("order must be >= 1")
    if len(directions) != j:
        raise ValueError(f"need {j} directions, got {len(directions)}")
    if j > MAX_ORDER and spec.is_builtin:
        raise UnsupportedOrder(f"builtin terms support derivative orders up to {MAX_ORDER}")
    total = 0.0
    if spec.integral_terms:
        t0, t1, v0, v1 = segments(base)
        p0 = np.ones_like(v0)
        p1 = np.ones_like(v1)
        for d in directions:
            d0, d1 = path_values_like(d, base)
            p0 = p0 * d0
            p1 = p1 * d1
        total += _trapezoid(t0, t1, spec.integrand(t0, v0, j) * p0, spec.integrand(t1, v1, j) * p1)
    if spec.terminal_terms:
        prod = 1.0
        for d in directions:
            _, d1 = path_values_like(d, base)
            prod *= float(d1[-1])
        total += float(spec.terminal(terminal_value(base), j)) * prod
    for g in spec.generic_terms:
        if g.pairing is None:
            raise UnsupportedOrder(f"generic term {g.name!r} supplies no derivative measures")
        total += float(g.pairing(j, base, directions))
    return total


def _phi_z(phi0, z0, t):
    return np.asarray(phi0(t), dtype=float), np.asarray(z0(t), dtype=float)


def q_coefficients(n: int, F: FunctionalSpec, model: ProcessModel, phi0, z0, t):
    """Density c_n(t) and terminal weight c_n^T with Q(n, x) = int c_n x^n dt + c_n^T x(T)^n."""
    ph, zz = _phi_z(phi0, z0, t)
    fact = math.factorial(n)
    c = (F.integrand(t, ph, n) + g0_mixed(model, t, ph, zz, 0, n)) / fact
    T = float(np.max(t)) if np.size(t) else 0.0
    cT = float(F.terminal(float(phi0(T)), n)) / fact if F.terminal_terms else 0.0
    return c, cT


def q_functional(n: int, path, F: FunctionalSpec, model: ProcessModel, phi0, z0) -> float:
    """Q(n, x) = F^(n)(phi0)(x,...,x)/n! + int x(t)^n d^nG0/dx^n(t, phi0; z0)/n! dt."""
    if n < 2:
        raise ValueError("Q is defined for n >= 2")
    if not F.is_builtin:
        raise GenericMeasureUnsupported("Q(n, .) needs builtin integral/terminal terms")
    t0, t1, v0, v1 = segments(path)
    c0, _ = q_coefficients(n, F, model, phi0, z0, t0)
    c1, cT = q_coefficients(n, F, model, phi0, z0, t1)
    cT = float(F.terminal(float(phi0(t1[-1])), n)) / math.factorial(n) if F.terminal_terms else 0.0
    return _trapezoid(t0, t1, c0 * v0 ** n, c1 * v1 ** n) + cT * terminal_value(path) ** n


# ------------------------------------------------------------- A1 kernels

class _Cumulative:
    """Cumulative trapezoid integral of a piecewise-linear integrand."""

    def __init__(self, t0, t1, f0, f1):
        self.t0, self.t1, self.f0, self.f1 = t0, t1, f0, f1
        self.cum = np.concatenate([[0.0], np.cumsum(0.5 * (t1 - t0) * (f0 + f1))])

    def __call__(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        i = np.clip(np.searchsorted(self.t1, s, side="left"), 0, self.t0.size - 1)
        t0, t1, f0, f1 = self.t0[i], self.t1[i], self.f0[i], self.f1[i]
        ds = np.clip(s - t0, 0.0, None)
        span = np.where(t1 > t0, t1 - t0, 1.0)
        part = ds * (f0 + 0.5 * (f1 - f0) * ds / span)
        return self.cum[i] + part


def _alpha_along(model, phi0, z0, t, nz, nx):
    ph, zz = _phi_z(phi0, z0, t)
    return g0_mixed(model, t, ph, zz, nz, nx)


class Gamma1:
    """The kernels Gamma_1^k(x; s_1..s_k), k = 1, 2, 3, for one path x.

    The exponential factor exp{int_0^{s_i} alpha^1_2(v, phi0(v)) dv} is taken
    with the upper limit s_i, exactly as in the kernel definitions; it is
    integrated once on the path skeleton and reused.
    """

    def __init__(self, path, model: ProcessModel, phi0, z0):
        t0, t1, v0, v1 = segments(path)
        self.T = float(t1[-1])
        a12_0 = _alpha_along(model, phi0, z0, t0, 1, 1)
        a12_1 = _alpha_along(model, phi0, z0, t1, 1, 1)
        self._e = _Cumulative(t0, t1, a12_0, a12_1)
        a122_0 = _alpha_along(model, phi0, z0, t0, 1, 2)
        a122_1 = _alpha_along(model, phi0, z0, t1, 1, 2)
        self._c1 = _Cumulative(t0, t1, a122_0 * v0 ** 2, a122_1 * v1 ** 2)
        a22_0 = _alpha_along(model, phi0, z0, t0, 2, 1)
        a22_1 = _alpha_along(model, phi0, z0, t1, 2, 1)
        self._c2 = _Cumulative(t0, t1, a22_0 * v0, a22_1 * v1)
        a3_0 = _alpha_along(model, phi0, z0, t0, 3, 0)
        a3_1 = _alpha_along(model, phi0, z0, t1, 3, 0)
        self._c3 = _Cumulative(t0, t1, a3_0, a3_1)
        self.segments = (t0, t1, v0, v1)

    def expfactor(self, s):
        return np.exp(self._e(s))

    def __call__(self, k: int, *s):
        if len(s) != k:
            raise ValueError(f"Gamma_1^{k} takes {k} time arguments")
        s = [np.atleast_1d(np.asarray(si, dtype=float)) for si in s]
        smin = s[0]
        for si in s[1:]:
            smin = np.minimum(smin, si)
        ef = np.ones_like(smin)
        for si in s:
            ef = ef * self.expfactor(si)
        if k == 1:
            val = 0.5 * ef * self._c1(smin)
        elif k == 2:
            val = 0.5 * ef * self._c2(smin)
        elif k == 3:
            val = ef * self._c3(smin) / 6.0
        else:
            raise ValueError("k must be 1, 2 or 3")
        return val if val.size > 1 else float(val[0])


def gamma1_kernels(k: int, path, s_points, model: ProcessModel, phi0, z0):
    """Gamma_1^k(path; s_1, ..., s_k)."""
    return Gamma1(path, model, phi0, z0)(k, *s_points)


def apply_a1(G: FunctionalSpec, path, model: ProcessModel, phi0, z0) -> float:
    """A1 G(x) = sum_k < Gamma_1^k(x; .), G^(k)(x; ds) > for diagonal/terminal G."""
    if not G.is_builtin:
        raise GenericMeasureUnsupported("A1 needs diagonal or terminal derivative measures")
    gam = Gamma1(path, model, phi0, z0)
    t0, t1, v0, v1 = gam.segments
    T = gam.T
    xT = terminal_value(path)
    total = 0.0
    for k in (1, 2, 3):
        if G.integral_terms:
            g0k = G.integrand(t0, v0, k)
            g1k = G.integrand(t1, v1, k)
            if np.any(g0k) or np.any(g1k):
                k0 = gam(k, *([t0] * k))
                k1 = gam(k, *([t1] * k))
                total += _trapezoid(t0, t1, np.asarray(k0) * g0k, np.asarray(k1) * g1k)
        if G.terminal_terms:
            hk = float(G.terminal(xT, k))
            if hk:
                total += float(gam(k, *([T] * k))) * hk
    return total


# ------------------------------------------------------------- presets

def example1_F() -> FunctionalSpec:
    """F(phi) = int (phi - phi^2) dt."""
    return FunctionalSpec([IntegralTerm(
        lambda t, y: y - y * y,
        (lambda t, y: 1.0 - 2.0 * y, lambda t, y: -2.0, lambda t, y: 0.0, lambda t, y: 0.0),
        "y - y^2")], "example1-F")


def terminal_linear(lam: float = 1.0) -> FunctionalSpec:
    """F(phi) = lam * phi(T)."""
    lam = float(lam)
    return FunctionalSpec([TerminalTerm(
        lambda y: lam * y, (lambda y: lam, lambda y: 0.0, lambda y: 0.0, lambda y: 0.0),
        f"{lam}*y")], f"terminal-linear:{lam:g}")


def integral_linear(lam: float = 1.0) -> FunctionalSpec:
    """F(phi) = lam * int phi dt."""
    lam = float(lam)
    return FunctionalSpec([IntegralTerm(
        lambda t, y: lam * y, (lambda t, y: lam, lambda t, y: 0.0, lambda t, y: 0.0, lambda t, y: 0.0),
        f"{lam}*y")], f"integral-linear:{lam:g}")


def quadratic_penalty(kappa: float = 1.0) -> FunctionalSpec:
    """F(phi) = -(kappa/2) int phi^2 dt."""
    k = float(kappa)
    return FunctionalSpec([IntegralTerm(
        lambda t, y: -0.5 * k * y * y,
        (lambda t, y: -k * y, lambda t, y: -k, lambda t, y: 0.0, lambda t, y: 0.0),
        f"-{k}/2*y^2")], f"quadratic-penalty:{k:g}")


def constant(c: float = 1.0) -> FunctionalSpec:
    c = float(c)
    return FunctionalSpec([TerminalTerm(
        lambda y: c, (lambda y: 0.0, lambda y: 0.0, lambda y: 0.0, lambda y: 0.0), f"{c}")], f"constant:{c:g}")


def h_one() -> FunctionalSpec:
    spec = constant(1.0)
    spec.name = "H-one"
    return spec


def zero() -> FunctionalSpec:
    return FunctionalSpec([], "zero")


_FUNCTIONAL_PRESETS = {
    "example1-F": lambda: example1_F(),
    "terminal-linear": terminal_linear,
    "integral-linear": integral_linear,
    "quadratic-penalty": quadratic_penalty,
    "constant": constant,
    "H-one": lambda: h_one(),
    "zero": lambda: zero(),
}


def functional_preset(spec: str) -> FunctionalSpec:
    """Parse ``name`` or ``name:param`` (e.g. ``terminal-linear:1``)."""
    name, _, arg = spec.partition(":")
    name = name.strip()
    if name not in _FUNCTIONAL_PRESETS:
        raise KeyError(f"unknown functional preset {name!r}; choose from {sorted(_FUNCTIONAL_PRESETS)}")
    f = _FUNCTIONAL_PRESETS[name]
    if arg:
        return f(float(arg))
    return f()
