"""Free-endpoint variational problem max_{phi(0)=x0} [F(phi) - S(phi)].

Two independent routes:

* ``maximize_direct`` discretizes the path on a uniform grid (midpoint rule
  for the action, trapezoid for F) and maximizes over the free node values
  with L-BFGS, then polishes with Newton steps on the tridiagonal Hessian
  when F is builtin;
* ``euler_lagrange_shoot`` integrates the Hamiltonian form of the
  Euler-Lagrange equations, phi' = dG0/dz(z), z' = -dg/dy(t, phi), with z(T)
  equal to zero, shooting on phi'(0).
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import LinAlgError, solveh_banded
from scipy.optimize import brentq

from .errors import (AllStartsFailed, BracketNotFound, LegendreError, NonUniqueSuspected,
                     NotApplicable, OrderAnomalous)
from .functionals import FunctionalSpec, eval_functional
from .legendre import OK, h0_array, dh0_du
from .model import ProcessModel, g0_mixed
from .paths import PathGrid, TiltPath


@dataclass(frozen=True)
class Infinite:
    """Infinite action: the slope on ``interval`` is outside the reachable range."""

    interval: int
    slope: float

    def __bool__(self):
        return True


def action_s(model: ProcessModel, path: PathGrid):
    """Midpoint-rule action int H0(t, phi, phi') dt, or ``Infinite``."""
    val, _, status = h0_array(model, path.t_mid, path.mid_values, path.slopes)
    bad = np.flatnonzero(status != OK)
    if bad.size:
        return Infinite(int(bad[0]), float(path.slopes[bad[0]]))
    return float(path.dt * np.sum(val))


@dataclass
class ExtremalSolution:
    phi0: PathGrid
    z0: TiltPath
    value_F: float
    value_S: float
    gap: float
    method: str = "direct"
    diagnostics: dict = field(default_factory=dict)


class _Objective:
    """J(phi_1..phi_n) = F - S on a fixed grid with analytic derivatives."""

    def __init__(self, model: ProcessModel, F: FunctionalSpec, n: int):
        self.model, self.F, self.n = model, F, n
        self.T = model.T
        self.dt = self.T / n
        self.t = self.T * np.arange(n + 1) / n
        self.tm = self.T * (np.arange(n) + 0.5) / n
        w = np.full(n + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        self.w = w
        self.x0 = float(model.x0)
        self.homog = model.is_homogeneous
        self.z_warm = None
        self.evals = 0

    def full(self, free):
        return np.concatenate([[self.x0], free])

    def _action_parts(self, phi):
        xm = 0.5 * (phi[1:] + phi[:-1])
        s = np.diff(phi) / self.dt
        val, z, status = h0_array(self.model, self.tm, xm, s, z_start=self.z_warm)
        if np.any(status != OK):
            return None
        self.z_warm = z
        return xm, s, val, z

    def F_value(self, phi):
        return eval_functional(self.F, PathGrid(self.T, phi))

    def F_grad(self, phi):
        if self.F.is_builtin:
            g = self.w * self.F.integrand(self.t, phi, 1) if self.F.integral_terms else np.zeros_like(phi)
            if self.F.terminal_terms:
                g = g.copy()
                g[-1] += float(self.F.terminal(phi[-1], 1))
            return g
        g = np.zeros_like(phi)
        for i in range(1, phi.size):
            h = 1e-6 * max(1.0, abs(phi[i]))
            p = phi.copy()
            p[i] += h
            fp = self.F_value(p)
            p[i] -= 2 * h
            fm = self.F_value(p)
            g[i] = (fp - fm) / (2 * h)
        return g

    def value_grad(self, free):
        """(J, dJ/dfree) or None when the action is infinite."""
        self.evals += 1
        phi = self.full(free)
        parts = self._action_parts(phi)
        if parts is None:
            return None
        xm, s, val, z = parts
        S = self.dt * float(np.sum(val))
        if self.homog:
            hx = np.zeros_like(z)
        else:
            hx = -g0_mixed(self.model, self.tm, xm, z, 0, 1)
        gS = np.zeros_like(phi)
        gS[1:] += 0.5 * self.dt * hx + z
        gS[:-1] += 0.5 * self.dt * hx - z
        J = self.F_value(phi) - S
        g = self.F_grad(phi) - gS
        return J, g[1:]

    def neg_hessian_banded(self, free):
        """-Hess J in upper banded storage for solveh_banded, or None."""
        if not self.F.is_builtin:
            return None
        phi = self.full(free)
        parts = self._action_parts(phi)
        if parts is None:
            return None
        xm, s, val, z = parts
        m, tm = self.model, self.tm
        gzz = g0_mixed(m, tm, xm, z, 2, 0)
        if self.homog:
            gzx = np.zeros_like(z)
            gxx = np.zeros_like(z)
        else:
            gzx = g0_mixed(m, tm, xm, z, 1, 1)
            gxx = g0_mixed(m, tm, xm, z, 0, 2)
        huu = 1.0 / gzz
        hux = -gzx / gzz
        hxx = -gxx + gzx * gzx / gzz
        dt = self.dt
        a_ii = dt / 4 * hxx - hux + huu / dt        # left node of each interval
        a_jj = dt / 4 * hxx + hux + huu / dt        # right node
        a_ij = dt / 4 * hxx - huu / dt
        n = self.n
        diag = np.zeros(n + 1)
        diag[:-1] += a_ii
        diag[1:] += a_jj
        off = a_ij.copy()
        fd = self.w * self.F.integrand(self.t, phi, 2) if self.F.integral_terms else np.zeros(n + 1)
        if self.F.terminal_terms:
            fd = fd.copy()
            fd[-1] += float(self.F.terminal(phi[-1], 2))
        diag = diag - fd
        ab = np.zeros((2, n))
        ab[1] = diag[1:]
        ab[0, 1:] = off[1:]
        return ab


def _lbfgs_max(obj: _Objective, x, memory=10, max_iter=2000, gtol=1e-10, ftol=1e-15):
    """Maximize obj with L-BFGS and backtracking that also rejects infinite action."""
    res = obj.value_grad(x)
    if res is None:
        return None
    f, g = res
    S, Y = [], []
    it = 0
    stall = 0
    scale_g = obj.dt
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < gtol * scale_g:
            break
        # two-loop recursion on the minimization problem -J
        q = -g.copy()
        alphas = []
        for s, y in reversed(list(zip(S, Y))):
            rho = 1.0 / np.dot(y, s)
            a = rho * np.dot(s, q)
            alphas.append((a, rho, s, y))
            q -= a * y
        if S:
            gamma = np.dot(S[-1], Y[-1]) / np.dot(Y[-1], Y[-1])
        else:
            gamma = 1.0 / max(np.max(np.abs(g)) / obj.dt, 1.0) * obj.dt
        r = gamma * q
        for a, rho, s, y in reversed(alphas):
            b = rho * np.dot(y, r)
            r += s * (a - b)
        d = -r  # ascent direction for J
        slope = np.dot(g, d)
        if slope <= 0:
            S, Y = [], []
            d = g * obj.dt
            slope = np.dot(g, d)
        step = 1.0
        accepted = False
        for _ in range(60):
            xn = x + step * d
            rn = obj.value_grad(xn)
            if rn is not None and rn[0] >= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        fn, gn = rn
        s_vec, y_vec = xn - x, -(gn - g)
        if np.dot(s_vec, y_vec) > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        stall = stall + 1 if abs(fn - f) <= ftol * max(1.0, abs(f)) else 0
        x, f, g = xn, fn, gn
        if stall >= 3:
            break
    return x, f, g, it


def _newton_polish(obj: _Objective, x, f, g, max_iter=50, gtol=1e-13):
    for _ in range(max_iter):
        if np.max(np.abs(g)) < gtol * obj.dt:
            break
        ab = obj.neg_hessian_banded(x)
        if ab is None:
            break
        try:
            d = solveh_banded(ab, g)
        except (LinAlgError, ValueError):
            break
        step = 1.0
        done = False
        for _ in range(40):
            rn = obj.value_grad(x + step * d)
            if rn is not None and rn[0] >= f - 1e-15 * max(1.0, abs(f)):
                done = True
                break
            step *= 0.5
        if not done:
            break
        xn = x + step * d
        fn, gn = rn
        if np.max(np.abs(gn)) >= np.max(np.abs(g)) and step < 1:
            x, f, g = xn, fn, gn
            break
        x, f, g = xn, fn, gn
    return x, f, g


def _lln_path(model: ProcessModel, t):
    """Zero-cost path x' = alpha(t, x) (Euler on the grid)."""
    x = np.empty_like(t)
    x[0] = model.x0
    for i in range(1, t.size):
        x[i] = x[i - 1] + (t[i] - t[i - 1]) * float(model.alpha(t[i - 1], x[i - 1]))
    return x


def default_starts(T: float, t: np.ndarray, count: int = 5, previous: Optional[PathGrid] = None):
    s = t / T
    cands = [np.zeros_like(t), 0.5 * s, -0.5 * s, 0.5 * s * (2 - s), -0.5 * s * (2 - s)]
    k = 5
    while len(cands) < count:
        k += 1
        cands.append(0.25 * np.sin(k * np.pi * s / 2))
    cands = cands[:count]
    if previous is not None:
        cands[-1] = previous(t)
    return cands


def _run_start(model, F, n, start, opts):
    obj = _Objective(model, F, n)
    lln = _lln_path(model, obj.t)
    start = np.asarray(start, dtype=float).copy()
    start[0] = model.x0
    for theta in [1.0 / 2 ** k for k in range(12)] + [0.0]:
        cand = lln + theta * (start - lln)
        if obj.value_grad(cand[1:]) is not None:
            break
    else:
        return None
    newton = opts["polish"] and F.is_builtin
    # with an analytic Hessian a short L-BFGS warm-up is enough before Newton
    first = min(opts["max_iter"], 40) if newton else opts["max_iter"]
    out = _lbfgs_max(obj, cand[1:], memory=opts["memory"], max_iter=first, gtol=opts["gtol"])
    if out is None:
        return None
    x, f, g, it = out
    if newton:
        x, f, g = _newton_polish(obj, x, f, g)
        if np.max(np.abs(g)) >= opts["gtol"] * obj.dt:
            x, f, g, more = _lbfgs_max(obj, x, memory=opts["memory"], max_iter=opts["max_iter"], gtol=opts["gtol"])
            it += more
            x, f, g = _newton_polish(obj, x, f, g)
    return dict(phi=obj.full(x), gap=f, grad=float(np.max(np.abs(g))) / obj.dt, iterations=it, evals=obj.evals)


def extract_z0(model: ProcessModel, phi0: PathGrid, F: Optional[FunctionalSpec] = None):
    """Tilt z0 = dH0/du(t, phi0; phi0') at midpoints, plus node values.

    Interior node values average the adjacent midpoints.  End values use a
    half-step of the costate equation z' = -(dg/dy + dG0/dx), which at the
    free endpoint reproduces the discrete natural boundary condition.
    Returns ``(TiltPath, natural_bc_residual)``; the residual is
    z0(T) - h'(phi0(T)) when ``F`` is given, else NaN.
    """
    _, zm, status = h0_array(model, phi0.t_mid, phi0.mid_values, phi0.slopes)
    if np.any(status != OK):
        i = int(np.flatnonzero(status != OK)[0])
        raise LegendreError(f"tilt undefined on interval {i} (slope {phi0.slopes[i]!r})")
    t = phi0.t
    dt = phi0.dt
    zn = np.empty(phi0.n + 1)
    zn[1:-1] = 0.5 * (zm[1:] + zm[:-1])
    gx_first = float(g0_mixed(model, phi0.t_mid[0], phi0.mid_values[0], zm[0], 0, 1))
    gx_last = float(g0_mixed(model, phi0.t_mid[-1], phi0.mid_values[-1], zm[-1], 0, 1))
    resid = math.nan
    if F is not None and F.is_builtin:
        gy0 = float(F.integrand(t[0], phi0.values[0], 1)) if F.integral_terms else 0.0
        gyT = float(F.integrand(t[-1], phi0.values[-1], 1)) if F.integral_terms else 0.0
        zn[0] = zm[0] + 0.5 * dt * (gy0 + gx_first)
        zn[-1] = zm[-1] - 0.5 * dt * (gyT + gx_last)
        hT = float(F.terminal(phi0.values[-1], 1)) if F.terminal_terms else 0.0
        resid = zn[-1] - hT
    else:
        zn[0] = 1.5 * zm[0] - 0.5 * zm[1]
        zn[-1] = 1.5 * zm[-1] - 0.5 * zm[-2]
    return TiltPath(t, zn, phi0.t_mid, zm), resid


def _second_variation_max(model, F, phi):
    """Largest eigenvalue of Hess(F - S)/dt on the free nodes (negative => strict max)."""
    obj = _Objective(model, F, phi.size - 1)
    ab = obj.neg_hessian_banded(phi[1:])
    if ab is None:
        return math.nan
    n = ab.shape[1]
    from scipy.linalg import eigvals_banded
    lam = eigvals_banded(ab, lower=False, select="i", select_range=(0, 0))
    return float(-lam[0] / obj.dt)


def maximize_direct(F: FunctionalSpec, model: ProcessModel, n: int = 200, multistarts: int = 5,
                    memory: int = 10, max_iter: int = 2000, gtol: float = 1e-10, polish: bool = True,
                    previous: Optional[PathGrid] = None, workers: int = 1, tol: float = 1e-7) -> ExtremalSolution:
    """Discretize-then-optimize maximizer of F - S with multistarts."""
    if n < 2:
        raise ValueError("n must be >= 2")
    t = model.T * np.arange(n + 1) / n
    starts = default_starts(model.T, t, multistarts, previous)
    opts = dict(memory=memory, max_iter=max_iter, gtol=gtol, polish=polish)
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda s: _run_start(model, F, n, s, opts), starts))
    else:
        results = [_run_start(model, F, n, s, opts) for s in starts]
    ok = [(i, r) for i, r in enumerate(results) if r is not None]
    if not ok:
        raise AllStartsFailed("every start has infinite action")
    order = sorted(ok, key=lambda ir: (-ir[1]["gap"], tuple(ir[1]["phi"])))
    best = order[0][1]
    phis = [r["phi"] for _, r in ok]
    gaps = np.array([r["gap"] for _, r in ok])
    spread = max(float(np.max(np.abs(p - q))) for p in phis for q in phis) if len(phis) > 1 else 0.0
    nonunique = False
    for a in range(len(ok)):
        for b in range(a + 1, len(ok)):
            ra, rb = ok[a][1], ok[b][1]
            if abs(ra["gap"] - rb["gap"]) < tol and np.max(np.abs(ra["phi"] - rb["phi"])) > max(10 * tol, 1e-6):
                nonunique = True
    if nonunique:
        warnings.warn("multistarts reached equal values along different paths", NonUniqueSuspected)
    phi0 = PathGrid(model.T, best["phi"])
    z0, resid = extract_z0(model, phi0, F)
    S = action_s(model, phi0)
    Fv = eval_functional(F, phi0)
    diag = dict(
        n=n, multistart_gaps=gaps.tolist(), multistart_spread=spread, nonunique=nonunique,
        failed_starts=len(results) - len(ok), grad_norm=best["grad"], iterations=best["iterations"],
        natural_bc_residual=resid,
    )
    try:
        diag["second_variation_max"] = _second_variation_max(model, F, best["phi"])
    except Exception:  # diagnostic only
        diag["second_variation_max"] = math.nan
    return ExtremalSolution(phi0, z0, Fv, float(S), Fv - float(S), "direct", diag)


def euler_lagrange_shoot(F: FunctionalSpec, model: ProcessModel, n_out: int = 200, rtol: float = 1e-12,
                         atol: float = 1e-13, tol: float = 1e-10, bracket=(-1.0, 1.0),
                         max_expansions: int = 60) -> ExtremalSolution:
    """Shooting solution of the Euler-Lagrange system with free right endpoint.

    Requires F = int g(t, phi) dt (integral terms only) and a cumulant that
    depends on z alone.  With z = H0'(phi') the equation
    d/dt H0'(phi') = -g_y(t, phi) becomes the first-order system
    phi' = G0'(z), z' = -g_y(t, phi), and the natural boundary condition is
    z(T) = 0.  The initial slope phi'(0) is found by bracketing + Brent.
    """
    if not F.is_builtin or F.terminal_terms:
        raise NotApplicable("shooting needs an integral-type functional")
    if not model.is_homogeneous:
        raise NotApplicable("shooting needs a cumulant without (t, x) dependence")
    T, x0 = model.T, float(model.x0)
    gz = lambda z: float(g0_mixed(model, 0.0, 0.0, z, 1, 0))
    g0 = lambda z: float(g0_mixed(model, 0.0, 0.0, z, 0, 0))

    def rhs(t, y):
        phi, z = y[0], y[1]
        v = gz(z)
        gval = float(F.integrand(t, phi, 0))
        return [v, -float(F.integrand(t, phi, 1)), gval, z * v - g0(z)]

    def integrate(s, dense=False):
        z_init = dh0_du(model, 0.0, x0, s)
        return solve_ivp(rhs, (0.0, T), [x0, z_init, 0.0, 0.0], method="RK45", rtol=rtol, atol=atol,
                         dense_output=dense)

    def residual(s):
        try:
            sol = integrate(s)
        except (LegendreError, OverflowError, FloatingPointError):
            return math.nan
        if sol.status != 0:
            return math.nan
        return float(sol.y[1, -1])

    r0 = residual(0.0)
    if r0 == 0.0:
        s_star = 0.0
    else:
        a, b = bracket
        ra, rb = residual(a), residual(b)
        k = 0
        while not (np.isfinite(ra) and np.isfinite(rb) and ra * rb <= 0):
            k += 1
            if k > max_expansions:
                raise BracketNotFound("could not bracket the natural boundary condition")
            # keep the half that still has finite residuals and the sign change candidate
            if np.isfinite(r0) and np.isfinite(ra) and ra * r0 <= 0:
                b, rb = 0.0, r0
                break
            if np.isfinite(r0) and np.isfinite(rb) and rb * r0 <= 0:
                a, ra = 0.0, r0
                break
            a, b = 2 * a, 2 * b
            ra, rb = residual(a), residual(b)
        s_star = brentq(residual, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=300)
    sol = integrate(s_star, dense=True)
    resid = float(sol.y[1, -1])
    t = T * np.arange(n_out + 1) / n_out
    tm = T * (np.arange(n_out) + 0.5) / n_out
    Y = sol.sol(t)
    Ym = sol.sol(tm)
    phi0 = PathGrid(T, Y[0])
    phi0.values[0] = x0
    z0 = TiltPath(t, Y[1], tm, Ym[1])
    Fv, Sv = float(sol.y[2, -1]), float(sol.y[3, -1])
    diag = dict(initial_slope=s_star, natural_bc_residual=resid, converged=abs(resid) < tol, nfev=int(sol.nfev))
    return ExtremalSolution(phi0, z0, Fv, Sv, Fv - Sv, "shooting", diag)


@dataclass
class Refinement:
    ns: list
    gaps: list
    extrapolated: float
    error_estimate: float
    order: float
    solutions: list


def refine_and_extrapolate(solve: Callable, n: int = 100, factor: int = 2, levels: int = 3,
                           assumed_order: float = 2.0) -> Refinement:
    """Richardson extrapolation of the gap over grids n, factor*n, factor^2*n.

    ``solve(n, previous)`` returns an ExtremalSolution; ``previous`` is the
    coarser solution (or None) and may be used as a warm start.
    """
    if levels < 3:
        raise ValueError("need at least three grids")
    ns, sols = [], []
    prev = None
    for k in range(levels):
        nk = n * factor ** k
        sol = solve(nk, prev)
        ns.append(nk)
        sols.append(sol)
        prev = sol.phi0
    gaps = [s.gap for s in sols]
    d1 = gaps[-3] - gaps[-2]
    d2 = gaps[-2] - gaps[-1]
    scale = max(1.0, abs(gaps[-1]))
    r = factor ** assumed_order
    if abs(d1) <= 1e-12 * scale and abs(d2) <= 1e-12 * scale:
        return Refinement(ns, gaps, gaps[-1], max(abs(d1), abs(d2)), math.nan, sols)
    order = math.log(abs(d1 / d2)) / math.log(factor) if d2 != 0 and d1 * d2 > 0 else math.nan
    if not (order >= 1):
        raise OrderAnomalous(f"empirical refinement order {order!r} (gaps {gaps!r})")
    extrap = gaps[-1] + (gaps[-1] - gaps[-2]) / (r - 1)
    return Refinement(ns, gaps, extrap, abs(extrap - gaps[-1]), order, sols)
