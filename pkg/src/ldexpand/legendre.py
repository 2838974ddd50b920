"""Numerical Legendre transform H(u) = sup_z [z*u - G(z)] of convex cumulants.

The supremum is found by solving G'(z) = u with a Newton iteration kept
inside a bracket (bisection fallback).  The bracket is doubled until it
encloses the root.  The solver is vectorized: every element of ``u`` is
handled independently and reports its own status.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CumulantOverflow, NoConvergence, NonConvexDetected, Unbounded
from .model import ProcessModel, g0_mixed

OK, UNBOUNDED, NOCONV, NONCONVEX = 0, 1, 2, 3
_ERRORS = {UNBOUNDED: Unbounded, NOCONV: NoConvergence, NONCONVEX: NonConvexDetected}


@dataclass
class LegendreResult:
    value: float
    argmax_z: float
    iterations: int
    converged: bool


def _fd_derivative(g):
    def dg(z):
        z = np.asarray(z, dtype=float)
        h = 1e-6 * np.maximum(1.0, np.abs(z))
        return (g(z + h) - g(z - h)) / (2 * h)
    return dg


def solve_dual(dg, u, d2g=None, z_start=None, z_bracket=(-1.0, 1.0), tol=1e-12,
               max_expansions=60, max_iter=200, z_limit=math.inf):
    """Solve dg(z) = u elementwise.

    Returns ``(z, status, iterations)``; ``status`` is OK, UNBOUNDED, NOCONV or
    NONCONVEX per element.  ``dg`` and ``d2g`` must accept arrays and act
    elementwise on the positions of ``u``; they receive a boolean mask of the
    active elements as second argument.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float)).astype(float)
    n = u.size
    status = np.full(n, OK, dtype=int)
    if z_start is None:
        lo = np.full(n, float(z_bracket[0]))
        hi = np.full(n, float(z_bracket[1]))
    else:
        zs = np.broadcast_to(np.asarray(z_start, dtype=float), u.shape).copy()
        half = 0.5 * (z_bracket[1] - z_bracket[0])
        lo, hi = zs - half, zs + half
    lo = np.clip(lo, -z_limit, z_limit)
    hi = np.clip(hi, -z_limit, z_limit)
    all_mask = np.ones(n, dtype=bool)
    glo = dg(lo, all_mask) - u
    ghi = dg(hi, all_mask) - u
    status[glo > ghi] = NONCONVEX

    # bracket expansion
    for _ in range(max_expansions + 1):
        need_lo = (glo > 0) & (status == OK)
        need_hi = (ghi < 0) & (status == OK)
        if not (need_lo.any() or need_hi.any()):
            break
        stuck = (need_lo & (lo <= -z_limit)) | (need_hi & (hi >= z_limit))
        status[stuck] = UNBOUNDED
        need_lo &= ~stuck
        need_hi &= ~stuck
        width = hi - lo
        if need_lo.any():
            new = np.maximum(lo[need_lo] - width[need_lo], -z_limit)
            hi[need_lo], ghi[need_lo] = lo[need_lo], glo[need_lo]
            lo[need_lo] = new
            glo[need_lo] = dg(lo, need_lo)[need_lo] - u[need_lo]
            status[need_lo & (glo > ghi)] = NONCONVEX
        if need_hi.any():
            new = np.minimum(hi[need_hi] + width[need_hi], z_limit)
            lo[need_hi], glo[need_hi] = hi[need_hi], ghi[need_hi]
            hi[need_hi] = new
            ghi[need_hi] = dg(hi, need_hi)[need_hi] - u[need_hi]
            status[need_hi & (glo > ghi)] = NONCONVEX
    else:
        status[((glo > 0) | (ghi < 0)) & (status == OK)] = UNBOUNDED
    status[(status == OK) & (glo > ghi)] = NONCONVEX

    # safeguarded Newton inside [lo, hi]
    if z_start is None:
        z = 0.5 * (lo + hi)
    else:
        z = np.clip(np.broadcast_to(np.asarray(z_start, dtype=float), u.shape), lo, hi)
    z = np.where(np.isfinite(z), z, 0.0)
    active = status == OK
    iters = np.zeros(n, dtype=int)
    for it in range(max_iter):
        if not active.any():
            break
        r = np.zeros(n)
        r[active] = dg(z, active)[active] - u[active]
        done = active & (np.abs(r) < tol)
        collapsed = active & ((hi - lo) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(z)))
        done |= collapsed
        active &= ~done
        if not active.any():
            break
        iters[active] += 1
        pos = active & (r > 0)
        neg = active & (r < 0)
        hi[pos] = z[pos]
        lo[neg] = z[neg]
        if d2g is not None:
            d2 = np.ones(n)
            d2[active] = d2g(z, active)[active]
            bad = active & (d2 < 0)
            if bad.any():
                status[bad] = NONCONVEX
                active &= ~bad
            with np.errstate(divide="ignore", invalid="ignore"):
                step = z - r / d2
        else:
            step = np.full(n, np.nan)
        ok_step = np.isfinite(step) & (step > lo) & (step < hi)
        z = np.where(active & ok_step, step, np.where(active, 0.5 * (lo + hi), z))
    status[active] = NOCONV
    return z, status, iters


def legendre_sup(g, u: float, tol: float = 1e-12, z_bracket=(-1.0, 1.0), dg=None, d2g=None,
                 z_start=None, max_expansions: int = 60, max_iter: int = 200) -> LegendreResult:
    """sup_z [z*u - g(z)] for a one-dimensional convex ``g``.

    ``dg`` (and optionally ``d2g``) are the derivatives of ``g``; without
    ``dg`` a central difference is used, which limits attainable accuracy.
    """
    dg = dg if dg is not None else _fd_derivative(g)
    wrap = lambda f: (lambda z, mask: np.array([float(f(float(v))) for v in z]))
    z, status, it = solve_dual(wrap(dg), u, wrap(d2g) if d2g is not None else None, z_start=z_start,
                               z_bracket=z_bracket, tol=tol, max_expansions=max_expansions, max_iter=max_iter)
    st = int(status[0])
    if st != OK:
        raise _ERRORS[st](f"Legendre transform failed at u={u!r} (z={z[0]!r})")
    zs = float(z[0])
    return LegendreResult(zs * float(u) - float(g(zs)), zs, int(it[0]), True)


def h0_array(model: ProcessModel, t, x, u, z_start=None, tol: float = 1e-12):
    """Vectorized H0(t, x; u).

    Returns ``(value, z, status)`` arrays with the broadcast shape of the
    inputs; ``value`` is NaN where ``status != OK``.
    """
    shape = np.broadcast(np.asarray(t), np.asarray(x), np.asarray(u)).shape
    tt = np.broadcast_to(np.asarray(t, dtype=float), shape).ravel()
    xx = np.broadcast_to(np.asarray(x, dtype=float), shape).ravel()
    uu = np.broadcast_to(np.asarray(u, dtype=float), shape).ravel()
    zl = model.z_limit

    def dg(z, mask):
        out = np.zeros_like(z)
        out[mask] = g0_mixed(model, tt[mask], xx[mask], z[mask], 1, 0)
        return out

    def d2g(z, mask):
        out = np.ones_like(z)
        out[mask] = g0_mixed(model, tt[mask], xx[mask], z[mask], 2, 0)
        return out

    zs = None if z_start is None else np.broadcast_to(np.asarray(z_start, dtype=float), shape).ravel()
    z, status, _ = solve_dual(dg, uu, d2g, z_start=zs, tol=tol, z_limit=zl)
    val = np.full(uu.shape, np.nan)
    ok = status == OK
    if ok.any():
        val[ok] = z[ok] * uu[ok] - g0_mixed(model, tt[ok], xx[ok], z[ok], 0, 0)
    return val.reshape(shape), z.reshape(shape), status.reshape(shape)


def h0(model: ProcessModel, t: float, x: float, u: float, tol: float = 1e-12) -> LegendreResult:
    """H0(t, x; u) with its maximizing dual point."""
    g = lambda z: g0_mixed(model, t, x, z, 0, 0)
    dg = lambda z: g0_mixed(model, t, x, z, 1, 0)
    d2g = lambda z: g0_mixed(model, t, x, z, 2, 0)
    zl = model.z_limit

    def dgm(z, mask):
        return dg(z)

    def d2gm(z, mask):
        return d2g(z)

    z, status, it = solve_dual(dgm, u, d2gm, tol=tol, z_limit=zl)
    st = int(status[0])
    if st != OK:
        raise _ERRORS[st](f"H0 undefined at (t={t!r}, x={x!r}, u={u!r})")
    zs = float(z[0])
    return LegendreResult(zs * float(u) - float(g(zs)), zs, int(it[0]), True)


def dh0_du(model: ProcessModel, t: float, x: float, u: float) -> float:
    """dH0/du, equal to the maximizing z by the envelope theorem."""
    return h0(model, t, x, u).argmax_z


def h_inequality_margin(p, h_values):
    """H(p) - [|p| ln(|p| + sqrt(p^2+1)) + 1 - sqrt2 |p| - sqrt2]."""
    p = np.abs(np.asarray(p, dtype=float))
    rhs = p * np.log(p + np.sqrt(p * p + 1)) + 1 - math.sqrt(2) * p - math.sqrt(2)
    return np.asarray(h_values) - rhs


def h_inequality_check(u_grid, model: ProcessModel | None = None) -> float:
    """Worst margin of the lower bound on H0 for the symmetric unit-jump model."""
    from .model import example1
    model = model or example1()
    u_grid = np.asarray(u_grid, dtype=float)
    val, _, status = h0_array(model, 0.0, 0.0, u_grid)
    if np.any(status != OK):
        raise Unbounded("H0 undefined on part of the grid")
    return float(np.min(h_inequality_margin(u_grid, val)))
