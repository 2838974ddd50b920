"""Locally infinitely divisible process families and their cumulants.

A model is given by a drift ``alpha(t, x)``, a diffusion coefficient
``a(t, x) >= 0`` and a jump measure ``nu_{t,x}`` with bounded support.  The
process jumps by ``eps*u`` at rate ``nu/eps``, diffuses with variance
``eps*a*dt`` and otherwise moves with velocity ``alpha - int u nu(du)``.  Its
local cumulant is

    G0(t, x; z) = z*alpha + a*z**2/2 + int (exp(z*u) - 1 - z*u) nu(du).

All evaluation routines broadcast over ``t``, ``x`` and ``z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import CumulantOverflow, UnsupportedOrder

LOG_MAX = math.log(np.finfo(float).max)  # ~709.78
_FD_EPS = np.finfo(float).eps


def _shape(*args):
    return np.broadcast(*[np.asarray(a) for a in args]).shape


class Coefficient:
    """A function of ``(t, x)`` with optional analytic x-derivatives.

    Parameters
    ----------
    f : callable
        ``f(t, x)``, vectorized over numpy arrays.
    derivs : sequence of callables or callable, optional
        Either ``[f_x, f_xx, ...]`` or a factory ``n -> f^(n)``.
    max_order : int, optional
        Highest x-derivative the function supports.  Without analytic
        derivatives, orders 1 and 2 fall back to central differences.
    """

    is_constant = False

    def __init__(self, f: Callable, derivs=None, max_order: Optional[int] = None, name: str = ""):
        self.f = f
        self.derivs = derivs
        self.max_order = max_order
        self.name = name

    def __call__(self, t, x):
        v = self.f(t, x)
        return np.asarray(v, dtype=float) + np.zeros(_shape(t, x))

    def _analytic(self, n):
        if self.derivs is None:
            return None
        if callable(self.derivs) and not isinstance(self.derivs, (list, tuple)):
            return self.derivs(n)
        if n <= len(self.derivs):
            return self.derivs[n - 1]
        return None

    def dx(self, n: int, t, x):
        """n-th partial derivative in x."""
        if n == 0:
            return self(t, x)
        if self.max_order is not None and n > self.max_order:
            raise UnsupportedOrder(f"coefficient {self.name or self.f!r} supports x-derivatives up to order {self.max_order}")
        g = self._analytic(n)
        if g is not None:
            return np.asarray(g(t, x), dtype=float) + np.zeros(_shape(t, x))
        if n > 2:
            raise UnsupportedOrder(
                f"x-derivative of order {n} needs analytic derivatives (finite differences stop at order 2)")
        x = np.asarray(x, dtype=float)
        if n == 1:
            h = _FD_EPS ** (1 / 3) * np.maximum(1.0, np.abs(x))
            return (self(t, x + h) - self(t, x - h)) / (2 * h)
        h = _FD_EPS ** (1 / 4) * np.maximum(1.0, np.abs(x))
        return (self(t, x + h) - 2 * self(t, x) + self(t, x - h)) / (h * h)

    def __repr__(self):
        return f"Coefficient({self.name or self.f!r})"


class Constant(Coefficient):
    """Coefficient that does not depend on (t, x)."""

    is_constant = True

    def __init__(self, value: float):
        self.value = float(value)
        super().__init__(lambda t, x: self.value, name=repr(self.value))

    def __call__(self, t, x):
        return np.full(_shape(t, x), self.value)

    def dx(self, n, t, x):
        if n == 0:
            return self(t, x)
        return np.zeros(_shape(t, x))

    def __repr__(self):
        return f"Constant({self.value!r})"


def as_coefficient(v) -> Coefficient:
    if isinstance(v, Coefficient):
        return v
    if callable(v):
        return Coefficient(v)
    return Constant(float(v))


class JumpMeasure:
    """Bounded-support jump measure reduced to weighted nodes at each (t, x)."""

    support: float = 0.0

    def nodes_weights(self, t, x, nx: int = 0):
        """Jump sizes ``u`` (shape (m,)) and weights (shape (m, *shape))."""
        raise NotImplementedError

    @property
    def is_constant(self) -> bool:
        return False

    def mass(self, t, x):
        u, w = self.nodes_weights(t, x)
        return w.sum(axis=0) if len(u) else np.zeros(_shape(t, x))

    def mean_jump(self, t, x):
        """int u nu_{t,x}(du)."""
        u, w = self.nodes_weights(t, x)
        if not len(u):
            return np.zeros(_shape(t, x))
        return np.tensordot(u, w, axes=(0, 0))


class AtomList(JumpMeasure):
    """Finite sum of point masses ``sum_j w_j(t, x) delta_{u_j}``."""

    def __init__(self, atoms: Sequence[tuple]):
        self.sizes = np.array([float(u) for u, _ in atoms], dtype=float)
        self.weights = [as_coefficient(w) for _, w in atoms]
        self.support = float(np.max(np.abs(self.sizes))) if len(self.sizes) else 0.0

    @property
    def is_constant(self):
        return all(w.is_constant for w in self.weights)

    def nodes_weights(self, t, x, nx=0):
        shape = _shape(t, x)
        if not len(self.sizes):
            return self.sizes, np.zeros((0,) + shape)
        w = np.empty((len(self.sizes),) + shape)
        for j, c in enumerate(self.weights):
            w[j] = c.dx(nx, t, x)
        return self.sizes, w

    def __repr__(self):
        return f"AtomList({list(zip(self.sizes.tolist(), self.weights))})"


class Density(JumpMeasure):
    """Density ``rho(t, x, u)`` on ``[-U, U]``, integrated by Gauss-Legendre.

    The measure is represented by its quadrature nodes everywhere in the
    package: cumulants, the PIDE and the simulated jump law all use the same
    discrete measure, so they stay mutually consistent.
    """

    def __init__(self, rho: Callable, support: float, quadrature_order: int = 32,
                 drho=None, constant_in_tx: bool = False):
        self.rho = rho
        self.support = float(support)
        self.order = int(quadrature_order)
        xi, wi = np.polynomial.legendre.leggauss(self.order)
        self.nodes = self.support * xi
        self.qweights = self.support * wi
        self.drho = drho
        self._constant = constant_in_tx

    @property
    def is_constant(self):
        return self._constant

    def _rho_dx(self, n, t, x, u):
        if n == 0:
            return self.rho(t, x, u)
        if self._constant:
            return np.zeros(np.broadcast(t, x, u).shape)
        g = None
        if self.drho is not None:
            g = self.drho(n) if callable(self.drho) else (self.drho[n - 1] if n <= len(self.drho) else None)
        if g is not None:
            return g(t, x, u)
        if n > 2:
            raise UnsupportedOrder(f"density x-derivative of order {n} needs an analytic derivative")
        x = np.asarray(x, dtype=float)
        if n == 1:
            h = _FD_EPS ** (1 / 3) * np.maximum(1.0, np.abs(x))
            return (self.rho(t, x + h, u) - self.rho(t, x - h, u)) / (2 * h)
        h = _FD_EPS ** (1 / 4) * np.maximum(1.0, np.abs(x))
        return (self.rho(t, x + h, u) - 2 * self.rho(t, x, u) + self.rho(t, x - h, u)) / (h * h)

    def nodes_weights(self, t, x, nx=0):
        shape = _shape(t, x)
        ushape = (self.order,) + (1,) * len(shape)
        if self._constant:
            if nx:
                return self.nodes, np.zeros((self.order,) + shape)
            if getattr(self, "_w0", None) is None:
                r0 = np.asarray(self.rho(0.0, 0.0, self.nodes), dtype=float) + 0 * self.nodes
                self._w0 = self.qweights * r0
            return self.nodes, np.broadcast_to(self._w0.reshape(ushape), (self.order,) + shape)
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        u = self.nodes.reshape(ushape)
        r = np.asarray(self._rho_dx(nx, t[None, ...] if t.ndim else t, x[None, ...] if x.ndim else x, u), dtype=float)
        r = np.broadcast_to(r, (self.order,) + shape)
        return self.nodes, self.qweights.reshape(ushape) * r

    def __repr__(self):
        return f"Density(U={self.support}, order={self.order})"


@dataclass
class ProcessModel:
    """Drift, diffusion and jump measure of a locally infinitely divisible family."""

    alpha: Coefficient
    a: Coefficient
    nu: JumpMeasure
    T: float = 1.0
    x0: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        self.alpha = as_coefficient(self.alpha)
        self.a = as_coefficient(self.a)
        if self.nu is None:
            self.nu = AtomList([])
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def is_homogeneous(self) -> bool:
        """True when no coefficient depends on (t, x)."""
        return self.alpha.is_constant and self.a.is_constant and self.nu.is_constant

    @property
    def has_diffusion(self) -> bool:
        return not (self.a.is_constant and self.a.value == 0.0)

    @property
    def has_jumps(self) -> bool:
        u, _ = self.nu.nodes_weights(0.0, 0.0)
        return len(u) > 0

    @property
    def z_limit(self) -> float:
        """Largest |z| for which exp(z*u) is finite on the support."""
        return LOG_MAX / self.nu.support if self.nu.support > 0 else math.inf


def check_overflow(z, support):
    """Raise CumulantOverflow if exp(z*u) can overflow on [-U, U]."""
    z = np.asarray(z, dtype=float)
    if support > 0 and z.size:
        zmax = np.max(np.abs(z))
        if not zmax * support <= LOG_MAX:
            raise CumulantOverflow(f"|z|*U = {zmax * support:.6g} exceeds {LOG_MAX:.6g}")


def _exp_tilt(z, u, support):
    """exp(z*u) over nodes, shape (m, *z.shape); raises on overflow."""
    z = np.asarray(z, dtype=float)
    check_overflow(z, support)
    return np.exp(u.reshape((-1,) + (1,) * z.ndim) * z)


def g0_mixed(model: ProcessModel, t, x, z, nz: int = 0, nx: int = 0):
    """Mixed partial d^{nz+nx} G0 / dz^nz dx^nx at (t, x; z)."""
    shape = _shape(t, x, z)
    t = np.broadcast_to(np.asarray(t, dtype=float), shape)
    x = np.broadcast_to(np.asarray(x, dtype=float), shape)
    z = np.broadcast_to(np.asarray(z, dtype=float), shape)
    u, w = model.nu.nodes_weights(t, x, nx)
    if nz == 0:
        out = model.alpha.dx(nx, t, x) * z + 0.5 * model.a.dx(nx, t, x) * z * z
    elif nz == 1:
        out = model.alpha.dx(nx, t, x) + model.a.dx(nx, t, x) * z
    elif nz == 2:
        out = model.a.dx(nx, t, x)
    else:
        out = np.zeros(shape)
    if len(u):
        uz = u.reshape((-1,) + (1,) * len(shape)) * z
        check_overflow(z, model.nu.support)
        ub = u.reshape((-1,) + (1,) * len(shape))
        if nz == 0:
            jump = np.expm1(uz) - uz
        elif nz == 1:
            jump = ub * np.expm1(uz)
        else:
            jump = ub ** nz * np.exp(uz)
        out = out + np.sum(w * jump, axis=0)
    return out


def cumulant_g0(model: ProcessModel, t, x, z):
    """G0(t, x; z)."""
    return g0_mixed(model, t, x, z, 0, 0)


def cumulant_geps(model: ProcessModel, t, x, z, eps: float):
    """G^eps(t, x; z) = G0(t, x; eps*z) / eps."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return cumulant_g0(model, t, x, eps * np.asarray(z, dtype=float)) / eps


@dataclass
class G0Partials:
    dz: np.ndarray
    dzz: np.ndarray
    dzx: np.ndarray
    dxn: list = field(default_factory=list)  # dxn[n-1] = d^n G0 / dx^n


def g0_partials(model: ProcessModel, t, x, z, order: int = 2) -> G0Partials:
    """z-partials and x-partials of G0 used by the expansion."""
    return G0Partials(
        dz=g0_mixed(model, t, x, z, 1, 0),
        dzz=g0_mixed(model, t, x, z, 2, 0),
        dzx=g0_mixed(model, t, x, z, 1, 1),
        dxn=[g0_mixed(model, t, x, z, 0, n) for n in range(1, order + 1)],
    )


@dataclass
class TiltedMoments:
    j: int
    alpha: np.ndarray
    beta: np.ndarray


def tilted_moments(model: ProcessModel, t, x, z0_val, j: int, nx: int = 0) -> TiltedMoments:
    """alpha^j and beta^j of the tilted jump measure (x-derivative ``nx``).

    alpha^1 = dG0/dz(z0), alpha^2 = a + int u^2 e^{z0 u} nu, and for j >= 3
    alpha^j = int u^j e^{z0 u} nu, beta^j = int |u|^j e^{z0 u} nu.
    """
    if j < 1:
        raise ValueError("j must be >= 1")
    shape = _shape(t, x, z0_val)
    if j <= 2:
        val = g0_mixed(model, t, x, z0_val, j, nx)
        if j == 1:
            absval = np.abs(val)
        else:
            absval = val
        return TiltedMoments(j, val, absval)
    z = np.broadcast_to(np.asarray(z0_val, dtype=float), shape)
    u, w = model.nu.nodes_weights(np.broadcast_to(t, shape), np.broadcast_to(x, shape), nx)
    if not len(u):
        return TiltedMoments(j, np.zeros(shape), np.zeros(shape))
    e = _exp_tilt(z, u, model.nu.support)
    ub = u.reshape((-1,) + (1,) * len(shape))
    return TiltedMoments(j, np.sum(w * ub ** j * e, axis=0), np.sum(w * np.abs(ub) ** j * e, axis=0))


def cumulant_g0_star(model: ProcessModel, t, x, z, phi0_val, dphi0_val, z0_val):
    """Residual cumulant of the tilted fluctuation around the extremal.

    G0*(t,x;z) = z[alpha - int u nu - phi0'] + a z^2/2 + int (e^{zu}-1) e^{z0 u} nu,
    all coefficients evaluated at phi0(t) + x.
    """
    y = np.asarray(phi0_val, dtype=float) + np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    u, w = model.nu.nodes_weights(t, y)
    out = z * (model.alpha(t, y) - model.nu.mean_jump(t, y) - dphi0_val) + 0.5 * model.a(t, y) * z * z
    if len(u):
        shape = _shape(t, y, z)
        ub = u.reshape((-1,) + (1,) * len(shape))
        out = out + np.sum(w * np.expm1(ub * z) * _exp_tilt(np.broadcast_to(z0_val, shape), u, model.nu.support), axis=0)
    return out


@dataclass
class AssumptionReport:
    n_points: int
    min_d2g_dz2: float
    max_abs_d2g_dzdx: float
    max_abs_a: float
    min_a: float
    negative_weights: int
    convexity_violations: int

    @property
    def ok(self) -> bool:
        return (self.min_d2g_dz2 > 0 and self.convexity_violations == 0
                and self.negative_weights == 0 and self.min_a >= 0)


def check_assumptions(model: ProcessModel, t_range=(0.0, None), x_range=(-2.0, 2.0),
                      z_range=(-3.0, 3.0), n_samples: int = 21, slack: float = 1e-12) -> AssumptionReport:
    """Advisory grid scan of the structural assumptions on G0.

    Scans an ``n_samples``-point grid per axis over the (t, x, z) box and
    reports the smallest d2G0/dz2, the largest |d2G0/dzdx|, the range of a,
    negative jump weights and midpoint-convexity violations of G0 in z.
    Never raises; the caller decides what to do with the report.
    """
    t_hi = model.T if t_range[1] is None else t_range[1]
    tt = np.linspace(t_range[0], t_hi, n_samples)
    xx = np.linspace(x_range[0], x_range[1], n_samples)
    zz = np.linspace(z_range[0], z_range[1], n_samples)
    T, X, Z = np.meshgrid(tt, xx, zz, indexing="ij")
    d2 = g0_mixed(model, T, X, Z, 2, 0)
    try:
        dzx = g0_mixed(model, T, X, Z, 1, 1)
        max_dzx = float(np.max(np.abs(dzx)))
    except UnsupportedOrder:
        max_dzx = math.nan
    a = model.a(T[..., 0], X[..., 0])
    g = g0_mixed(model, T, X, Z, 0, 0)
    second = g[..., 2:] - 2 * g[..., 1:-1] + g[..., :-2]
    scale = np.maximum(1.0, np.abs(g[..., 1:-1]))
    viol = int(np.sum(second < -slack * scale)) + int(np.sum(d2 < 0))
    _, w = model.nu.nodes_weights(T[..., 0], X[..., 0])
    return AssumptionReport(
        n_points=int(T.size),
        min_d2g_dz2=float(np.min(d2)),
        max_abs_d2g_dzdx=max_dzx,
        max_abs_a=float(np.max(np.abs(a))),
        min_a=float(np.min(a)),
        negative_weights=int(np.sum(w < 0)),
        convexity_violations=viol,
    )


# ---------------------------------------------------------------- presets

def _sin_plus_two():
    def deriv(n):
        return lambda t, x: np.sin(np.asarray(x, dtype=float) + n * np.pi / 2)
    return Coefficient(lambda t, x: np.sin(x) + 2.0, derivs=deriv, name="sin(x)+2")


def example1(T: float = 1.0) -> ProcessModel:
    """Symmetric unit jumps: nu = (delta_1 + delta_-1)/2, alpha = a = 0."""
    return ProcessModel(0.0, 0.0, AtomList([(1.0, 0.5), (-1.0, 0.5)]), T=T, name="example1")


def example2(T: float = 1.0) -> ProcessModel:
    """State-dependent unit jumps with r(x) = l(x) = sin(x) + 2."""
    r = _sin_plus_two()
    return ProcessModel(0.0, 0.0, AtomList([(1.0, r), (-1.0, r)]), T=T, name="example2")


def brownian(T: float = 1.0) -> ProcessModel:
    """Small-noise Brownian motion: alpha = 0, a = 1, no jumps."""
    return ProcessModel(0.0, 1.0, AtomList([]), T=T, name="brownian")


def pide_special(T: float = 1.0, b_amp: float = 0.2, a_const: float = 1.0, order: int = 32) -> ProcessModel:
    """Density u^2 on [-1, 1], a = 1, drift b(x) = 0.2 sin(x)."""
    def deriv(n):
        return lambda t, x: b_amp * np.sin(np.asarray(x, dtype=float) + n * np.pi / 2)
    b = Coefficient(lambda t, x: b_amp * np.sin(x), derivs=deriv, name=f"{b_amp}*sin(x)")
    nu = Density(lambda t, x, u: u * u + 0.0 * x, 1.0, order, constant_in_tx=True)
    return ProcessModel(b, a_const, nu, T=T, name="pide-special")


MODEL_PRESETS = {
    "example1": example1,
    "example2": example2,
    "brownian": brownian,
    "pide-special": pide_special,
}


def model_preset(name: str, **kw) -> ProcessModel:
    try:
        return MODEL_PRESETS[name](**kw)
    except KeyError:
        raise KeyError(f"unknown model preset {name!r}; choose from {sorted(MODEL_PRESETS)}") from None
