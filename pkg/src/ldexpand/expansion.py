"""Prefactor estimation by tilted importance sampling, K0 from the limit diffusion,
epsilon sweeps with K0/K1 fitting, and the tail/moment diagnostics.

For a tilted path xi with delta = xi - phi0 the log-weight of a sample is

    E = eps^-1 [F(xi) - int z dxi + int G0(t, xi; z) dt - (F(phi0) - S(phi0))].

Each bracketed O(1) quantity is accumulated segment by segment as a
difference against the same quantity along phi0 (D_F, D_z, D_G), so only
small numbers are summed; the deterministic remainder C (of the size of the
time-discretization error) is formed separately and everything is combined
in extended precision.  The Taylor pieces Q(2, eta), Q(3, eta), Q(4, eta) and
the first-order term are accumulated alongside, and the reported residual is
E minus their sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

from .errors import DegenerateExponent, FitIllConditioned, GenericMeasureUnsupported
from .functionals import FunctionalSpec, derivative_pairing, eval_functional
from .model import ProcessModel, g0_mixed
from .paths import PathGrid, SamplePath
from .simulate import CHUNK, Observer, SimConfig, _Recorder, limit_eta_batch, simulate_batch
from .variational import ExtremalSolution

Z95 = 1.959963984540054


@dataclass
class EstimateRecord:
    eps: float
    n_samples: int
    log_leading: float
    prefactor_mean: float
    prefactor_se: float
    n_clipped: int
    h: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def total_log(self) -> float:
        """log_leading + ln(prefactor_mean)."""
        if self.prefactor_mean <= 0:
            return -math.inf
        return self.log_leading + math.log(self.prefactor_mean)

    @property
    def total_log_se(self) -> float:
        return self.prefactor_se / self.prefactor_mean if self.prefactor_mean > 0 else math.inf

    @property
    def clipped_fraction(self) -> float:
        return self.n_clipped / self.n_samples if self.n_samples else 0.0


@dataclass
class K0Estimate:
    value: float
    se: float
    n: int
    k1_gaussian: float = math.nan
    k1_gaussian_se: float = math.nan

    @property
    def ci(self):
        return (self.value - Z95 * self.se, self.value + Z95 * self.se)


@dataclass
class CoefficientFit:
    K0_mc: float
    K0_mc_se: float
    K0_fit: float
    K1_fit: float
    K2_fit: Optional[float]
    cov: np.ndarray
    eps_grid: list
    residuals: np.ndarray

    def _ci(self, i):
        beta = [self.K0_fit, self.K1_fit, self.K2_fit][i]
        s = math.sqrt(max(self.cov[i, i], 0.0))
        return (beta - Z95 * s, beta + Z95 * s)

    @property
    def K0_ci(self):
        return self._ci(0)

    @property
    def K1_ci(self):
        return self._ci(1)

    @property
    def K0_mc_ci(self):
        return (self.K0_mc - Z95 * self.K0_mc_se, self.K0_mc + Z95 * self.K0_mc_se)

    @property
    def intervals_overlap(self) -> bool:
        a, b = self.K0_ci, self.K0_mc_ci
        return a[0] <= b[1] and b[0] <= a[1]


# ----------------------------------------------------------------- helpers

def _tables(F: FunctionalSpec, model: ProcessModel, sol: ExtremalSolution, n_min: int = 4000):
    """Deterministic references along (phi0, z0) on a uniform fine grid.

    The grid refines the solver grid by an integer factor, so linear
    interpolation of the phi0 table reproduces phi0 exactly.
    """
    T = model.T
    n_table = sol.phi0.n * max(1, -(-n_min // sol.phi0.n))
    t = T * np.arange(n_table + 1) / n_table
    ph = sol.phi0(t)
    zz = sol.z0(t)
    tab = {"t": t, "dt": T / n_table, "phi": ph, "gref": g0_mixed(model, t, ph, zz, 0, 0) + 0 * t,
           "fref": (F.integrand(t, ph, 0) + 0 * t) if (F.integral_terms and F.is_builtin) else np.zeros_like(t)}
    for n in (1, 2, 3, 4):
        c = g0_mixed(model, t, ph, zz, 0, n) + 0 * t
        if F.integral_terms:
            c = c + F.integrand(t, ph, n)
        tab[n] = c / math.factorial(n)
    pT = float(sol.phi0.values[-1])
    tab["T"] = {n: (float(F.terminal(pT, n)) / math.factorial(n) if F.terminal_terms else 0.0) for n in (1, 2, 3, 4)}
    return tab


def _eval_on_segments(spec: FunctionalSpec, t0, t1, x0, x1):
    if not spec.integral_terms:
        return 0.0
    return 0.5 * (t1 - t0) * (spec.integrand(t0, x0, 0) + spec.integrand(t1, x1, 0))


def _accumulate_py(idx, t0, t1, x0, x1, z, g0, gx0, gx1, dtab, phi, gref, fref, c1, c2, c3, c4, rs, acc):
    """Vectorized reference implementation of the per-segment accumulation.

    ``acc`` rows: DF, Dz, DG, C, L1, Q2, Q3, Q4, sup.
    """
    nt = phi.size - 1

    def at(tab, s):
        u = s / dtab
        i = np.minimum(u.astype(np.int64), nt - 1)
        w = u - i
        return tab[i] * (1.0 - w) + tab[i + 1] * w

    tau = t1 - t0
    p0, p1 = at(phi, t0), at(phi, t1)
    d0, d1 = x0 - p0, x1 - p1
    fr0, fr1 = at(fref, t0), at(fref, t1)
    gr = at(gref, t0)
    acc[0, idx] += 0.5 * tau * ((gx0 - fr0) + (gx1 - fr1))
    acc[1, idx] += z * ((x1 - x0) - (p1 - p0))
    acc[2, idx] += tau * (g0 - gr)
    acc[3, idx] += 0.5 * tau * (fr0 + fr1) - z * (p1 - p0) + tau * gr
    acc[4, idx] += 0.5 * tau * (at(c1, t0) * d0 + at(c1, t1) * d1)
    e0, e1 = d0 * rs, d1 * rs
    acc[5, idx] += 0.5 * tau * (at(c2, t0) * e0 * e0 + at(c2, t1) * e1 * e1)
    acc[6, idx] += 0.5 * tau * (at(c3, t0) * e0 ** 3 + at(c3, t1) * e1 ** 3)
    acc[7, idx] += 0.5 * tau * (at(c4, t0) * e0 ** 4 + at(c4, t1) * e1 ** 4)
    acc[8, idx] = np.maximum(acc[8, idx], np.maximum(np.abs(d0), np.abs(d1)))


if numba is not None:

    @numba.njit(cache=True)
    def _interp_u(tab, s, dtab, nt):  # pragma: no cover - jitted
        u = s / dtab
        i = min(int(u), nt - 1)
        w = u - i
        return tab[i] * (1.0 - w) + tab[i + 1] * w

    @numba.njit(cache=True)
    def _accumulate_nb(idx, t0, t1, x0, x1, z, g0, gx0, gx1, dtab, phi, gref, fref,
                       c1, c2, c3, c4, rs, acc):  # pragma: no cover - jitted
        nt = phi.size - 1
        for k in range(idx.size):
            j = idx[k]
            a, b = t0[k], t1[k]
            tau = b - a
            p0 = _interp_u(phi, a, dtab, nt)
            p1 = _interp_u(phi, b, dtab, nt)
            d0 = x0[k] - p0
            d1 = x1[k] - p1
            fr0 = _interp_u(fref, a, dtab, nt)
            fr1 = _interp_u(fref, b, dtab, nt)
            gr = _interp_u(gref, a, dtab, nt)
            acc[0, j] += 0.5 * tau * ((gx0[k] - fr0) + (gx1[k] - fr1))
            acc[1, j] += z[k] * ((x1[k] - x0[k]) - (p1 - p0))
            acc[2, j] += tau * (g0[k] - gr)
            acc[3, j] += 0.5 * tau * (fr0 + fr1) - z[k] * (p1 - p0) + tau * gr
            acc[4, j] += 0.5 * tau * (_interp_u(c1, a, dtab, nt) * d0 + _interp_u(c1, b, dtab, nt) * d1)
            e0 = d0 * rs
            e1 = d1 * rs
            q0 = e0 * e0
            q1 = e1 * e1
            acc[5, j] += 0.5 * tau * (_interp_u(c2, a, dtab, nt) * q0 + _interp_u(c2, b, dtab, nt) * q1)
            acc[6, j] += 0.5 * tau * (_interp_u(c3, a, dtab, nt) * q0 * e0 + _interp_u(c3, b, dtab, nt) * q1 * e1)
            acc[7, j] += 0.5 * tau * (_interp_u(c4, a, dtab, nt) * q0 * q0 + _interp_u(c4, b, dtab, nt) * q1 * q1)
            m = max(abs(d0), abs(d1))
            if m > acc[8, j]:
                acc[8, j] = m

    _accumulate = _accumulate_nb
else:  # pragma: no cover
    _accumulate = _accumulate_py


class _ExponentObserver(Observer):
    """Accumulates the compensated exponent pieces and the Taylor diagnostics."""

    ROWS = ("DF", "Dz", "DG", "C", "L1", "Q2", "Q3", "Q4", "sup_dev")

    def __init__(self, m, F, H, sol, model, eps, h, tab, moment_times, kernel=None):
        super().__init__(m)
        self.F, self.H, self.sol, self.model, self.eps, self.h = F, H, sol, model, eps, h
        self.tab = tab
        self.rs = 1.0 / math.sqrt(eps)
        self.acc = np.zeros((len(self.ROWS), m))
        self.Hint = np.zeros(m)
        self.mt = list(moment_times)
        self.eta_at = np.full((len(self.mt), m), np.nan)
        self.generic = not F.is_builtin
        self.kernel = kernel or _accumulate
        self.with_F = F.is_builtin and bool(F.integral_terms)
        if self.generic or not H.is_builtin:
            self.rec = _Recorder(m, 0.0, np.full(m, sol.phi0.values[0]))
        else:
            self.rec = None

    def phi(self, t):
        return np.interp(t, self.tab["t"], self.tab["phi"])

    def segment(self, idx, t0, t1, x0, x1, z, g0):
        if self.rec is not None:
            self.rec.segment(idx, t0, t1, x0, x1, z, g0)
        if self.with_F:
            gx0 = self.F.integrand(t0, x0, 0) + 0 * x0
            gx1 = self.F.integrand(t1, x1, 0) + 0 * x1
        else:
            gx0 = gx1 = np.zeros_like(x0)
        tb = self.tab
        self.kernel(idx, t0, t1, x0, x1, z, g0, gx0, gx1, tb["dt"], tb["phi"], tb["gref"], tb["fref"],
                    tb[1], tb[2], tb[3], tb[4], self.rs, self.acc)
        if self.H.is_builtin and self.H.integral_terms:
            self.Hint[idx] += _eval_on_segments(self.H, t0, t1, x0, x1)
        for j, tm in enumerate(self.mt):
            hit = t1 == tm
            if hit.any():
                self.eta_at[j, idx[hit]] = (x1[hit] - self.phi(tm)) * self.rs

    def jump(self, idx, t, x_left, x_new, z):
        if self.rec is not None:
            self.rec.jump(idx, t, x_left, x_new, z)
        self.acc[1, idx] += z * (x_new - x_left)
        self.acc[8, idx] = np.maximum(self.acc[8, idx], np.abs(x_new - self.phi(t)))

    def finish(self, x, t_end):
        self.xT = x.copy()
        pT = float(self.sol.phi0.values[-1])
        acc = self.acc
        acc[8] = np.maximum(acc[8], np.abs(x - pT))
        dT = x - pT
        self.dT = dT
        if self.F.terminal_terms and not self.generic:
            acc[0] += self.F.terminal(x, 0) - float(self.F.terminal(pT, 0))
            acc[3] += float(self.F.terminal(pT, 0))
        acc[4] += self.tab["T"][1] * dT
        for n in (2, 3, 4):
            acc[3 + n] += self.tab["T"][n] * (dT * self.rs) ** n
        if self.rec is not None:
            self._generic_finish(x)

    def _generic_finish(self, x):
        m = self.m
        self.Hval = np.empty(m)
        for i in range(m):
            rows = self.rec.rows[i]
            t = np.array([r[0] for r in rows])
            xs = np.array([r[1] for r in rows])
            xl = np.array([r[2] for r in rows])
            isj = np.array([r[3] for r in rows], dtype=bool)
            path = SamplePath(t, xs, xl, isj, np.zeros_like(t))
            ref = SamplePath(t, self.phi(t), self.phi(t), np.zeros_like(isj), np.zeros_like(t))
            if self.generic:
                fx, fp = eval_functional(self.F, path), eval_functional(self.F, ref)
                self.acc[0, i] += fx - fp
                self.acc[3, i] += fp
            self.Hval[i] = eval_functional(self.H, path)
        self.rec = None

    def result(self):
        if hasattr(self, "Hval"):
            Hv = self.Hval
        else:
            Hv = self.Hint.copy()
            if self.H.terminal_terms:
                Hv = Hv + self.H.terminal(self.xT, 0)
        out = {name: self.acc[i] for i, name in enumerate(self.ROWS)}
        out["H"] = Hv + np.zeros(self.m)
        for j in range(len(self.mt)):
            out[f"eta_{j}"] = self.eta_at[j]
        out["eta_T"] = self.dT * self.rs
        return out


def _mean_se(values):
    v = np.asarray(values, dtype=float)
    n = v.size
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(v) / n
    if n < 2:
        return mean, math.nan
    var = math.fsum((v - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def exponent_samples(model: ProcessModel, F: FunctionalSpec, H: FunctionalSpec, sol: ExtremalSolution,
                     eps: float, n: int, seed: int, h: float = 0.5, dt: Optional[float] = None,
                     workers: int = 1, moment_times: Optional[Sequence[float]] = None, path_offset: int = 0):
    """Per-path exponent E, H(xi), clipping flags and the Taylor diagnostics."""
    cfg = SimConfig(eps=eps, dt=dt, seed=seed, workers=workers)
    T = model.T
    n_steps = cfg.steps(T)
    if moment_times is None:
        moment_times = [T / 4, T / 2]
    # snap requested times onto the mesh so they are hit exactly
    mt = [T * round(s / T * n_steps) / n_steps for s in moment_times]
    tab = _tables(F, model, sol)
    res = simulate_batch(model, cfg, n, tilt=sol.z0, path_offset=path_offset,
                         observer_factory=lambda p0, m: _ExponentObserver(m, F, H, sol, model, eps, h, tab, mt))
    ex = res.extra
    ld = np.longdouble
    gap = ld(sol.gap)
    E = ((ld(1) * ex["DF"] - ld(1) * ex["Dz"] + ld(1) * ex["DG"]) + (ld(1) * ex["C"] - gap)) / ld(eps)
    E = E.astype(float)
    clipped = ex["sup_dev"] >= h
    taylor = ex["Q2"] + math.sqrt(eps) * ex["Q3"] + eps * ex["Q4"]
    L1 = (ex["L1"] - ex["Dz"]) / eps
    out = dict(E=E, H=ex["H"], clipped=clipped, Q2=ex["Q2"], Q3=ex["Q3"], Q4=ex["Q4"], L1=L1,
               taylor_residual=E - (L1 + taylor), sup_dev=ex["sup_dev"], eta_T=ex["eta_T"],
               moment_times=mt, log_weight=res.log_weight, x_T=res.x_T)
    for j in range(len(mt)):
        out[f"eta_{j}"] = ex[f"eta_{j}"]
    return out


def estimate_prefactor(model: ProcessModel, F: FunctionalSpec, H: FunctionalSpec, sol: ExtremalSolution,
                       eps: float, n: int, seed: int, h: float = 0.5, dt: Optional[float] = None,
                       workers: int = 1, localize: bool = True) -> EstimateRecord:
    """Importance-sampling estimate of the prefactor at one eps.

    The sample of a path is H(xi) e^E.  Paths with sup|xi - phi0| >= h are
    counted in ``n_clipped``; with ``localize`` they contribute 0 (and still
    count in ``n``), otherwise they are kept and the count is a diagnostic
    of the tube exit frequency only.
    """
    if H.is_zero:
        return EstimateRecord(eps, n, sol.gap / eps, 0.0, 0.0, 0, h, dict(trivial=True))
    s = exponent_samples(model, F, H, sol, eps, n, seed, h, dt, workers)
    outside = s["clipped"]
    nc = int(outside.sum())
    if localize and nc > 0.5 * n:
        raise DegenerateExponent(f"{nc} of {n} paths leave the localization tube (h={h})")
    clipped = outside if localize else np.zeros_like(outside)
    with np.errstate(over="ignore"):
        samples = np.where(clipped, 0.0, s["H"] * np.exp(np.where(clipped, 0.0, s["E"])))
    mean, se = _mean_se(samples)
    keep = ~clipped
    diag = dict(
        q2_mean=float(np.mean(s["Q2"][keep])) if keep.any() else math.nan,
        q3_mean=float(np.mean(s["Q3"][keep])) if keep.any() else math.nan,
        taylor_residual_rms=float(np.sqrt(np.mean(s["taylor_residual"][keep] ** 2))) if keep.any() else math.nan,
        exponent_mean=float(np.mean(s["E"][keep])) if keep.any() else math.nan,
        eta4_T=float(np.mean(s["eta_T"][keep] ** 4)) if keep.any() else math.nan,
        inv_weight_mean=_mean_se(np.exp(s["log_weight"]))[0],
    )
    diag["localized"] = localize
    return EstimateRecord(eps, n, sol.gap / eps, mean, se, nc, h, diag)


class _QObserver(Observer):
    """Q(2, eta), Q(3, eta) and H'(phi0)(eta) along limit-diffusion paths."""

    def __init__(self, m, tab, H, sol):
        super().__init__(m)
        self.tab = tab
        self.q2 = np.zeros(m)
        self.q3 = np.zeros(m)
        self.h1 = np.zeros(m)
        self.H, self.sol = H, sol

    def segment(self, idx, t0, t1, x0, x1, z, g0):
        tt = self.tab["t"]
        tau = t1 - t0
        a2, b2 = np.interp(t0, tt, self.tab[2]), np.interp(t1, tt, self.tab[2])
        s0, s1 = x0 * x0, x1 * x1
        if a2 or b2:
            self.q2 += 0.5 * tau * (a2 * s0 + b2 * s1)
        a3, b3 = np.interp(t0, tt, self.tab[3]), np.interp(t1, tt, self.tab[3])
        if a3 or b3:
            self.q3 += 0.5 * tau * (a3 * s0 * x0 + b3 * s1 * x1)
        if self.H.integral_terms:
            h0 = float(self.H.integrand(t0, self.sol.phi0(t0), 1))
            h1 = float(self.H.integrand(t1, self.sol.phi0(t1), 1))
            if h0 or h1:
                self.h1 += 0.5 * tau * (h0 * x0 + h1 * x1)

    def finish(self, x, t_end):
        self.q2 += self.tab["T"][2] * x ** 2
        self.q3 += self.tab["T"][3] * x ** 3
        if self.H.terminal_terms:
            self.h1 += float(self.H.terminal(float(self.sol.phi0.values[-1]), 1)) * x

    def result(self):
        return dict(q2=self.q2, q3=self.q3, h1=self.h1)


def limit_coefficients(model: ProcessModel, sol: ExtremalSolution):
    """A(t) = d2G0/dz2 and g(t) = d2G0/dzdx along (phi0, z0)."""
    A = lambda t: g0_mixed(model, t, sol.phi0(t), sol.z0(t), 2, 0)
    g = lambda t: g0_mixed(model, t, sol.phi0(t), sol.z0(t), 1, 1)
    return A, g


def estimate_k0(F: FunctionalSpec, H: FunctionalSpec, model: ProcessModel, sol: ExtremalSolution, n: int,
                seed: int, n_steps: int = 2000, workers: int = 1) -> K0Estimate:
    """K0 = H(phi0) E exp{Q(2, eta)} over exact limit-diffusion paths from 0.

    Also reports the expectation part of K1,
    E[exp{Q(2, eta)} (Q(3, eta) H(phi0) + H'(phi0)(eta))].
    """
    if not H.is_builtin:
        raise GenericMeasureUnsupported("estimate_k0 needs a builtin H")
    Hphi = eval_functional(H, sol.phi0)
    A, g = limit_coefficients(model, sol)
    tab = _tables(F, model, sol)
    _, extra = limit_eta_batch(A, g, model.T, n_steps, n, seed,
                               observer_factory=lambda p0, m: _QObserver(m, tab, H, sol), workers=workers)
    e2 = np.exp(extra["q2"])
    mean, se = _mean_se(Hphi * e2)
    k1, k1se = _mean_se(e2 * (extra["q3"] * Hphi + extra["h1"]))
    return K0Estimate(mean, se, n, k1, k1se)


def fit_prefactors(eps, y, se, K0_mc=math.nan, K0_mc_se=math.nan, cond_max: float = 1e8) -> CoefficientFit:
    """SE-weighted least squares of prefactor(eps) on 1, sqrt(eps) (and eps with >= 4 points)."""
    eps = np.asarray(eps, dtype=float)
    y = np.asarray(y, dtype=float)
    se = np.asarray(se, dtype=float)
    if eps.size < 3:
        raise FitIllConditioned("need at least three eps values")
    cols = [np.ones_like(eps), np.sqrt(eps)]
    if eps.size >= 4:
        cols.append(eps)
    X = np.column_stack(cols)
    floor = 1e-13 * np.maximum(np.abs(y), 1.0)
    s = np.maximum(np.where(np.isfinite(se), se, 0.0), floor)
    sw = 1.0 / s
    Xw = X * sw[:, None]
    yw = y * sw
    cond = np.linalg.cond(Xw)
    if not cond <= cond_max:
        raise FitIllConditioned(f"design matrix condition number {cond:.3g}")
    beta, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    cov = np.linalg.inv(Xw.T @ Xw)
    if X.shape[1] == 2:
        cov3 = np.full((3, 3), np.nan)
        cov3[:2, :2] = cov
        cov = cov3
    resid = y - X @ beta
    K2 = float(beta[2]) if beta.size > 2 else None
    return CoefficientFit(K0_mc, K0_mc_se, float(beta[0]), float(beta[1]), K2, cov, eps.tolist(), resid)


@dataclass
class SweepResult:
    records: list
    fit: CoefficientFit
    k0: Optional[K0Estimate]


def epsilon_sweep(model: ProcessModel, F: FunctionalSpec, H: FunctionalSpec, sol: ExtremalSolution,
                  eps_grid: Sequence[float] = (0.4, 0.2, 0.1, 0.05), n: int = 100_000, seed: int = 0,
                  h: float = 0.5, dt: Optional[float] = None, workers: int = 1, k0: Optional[K0Estimate] = None,
                  k0_samples: Optional[int] = None, localize: bool = True) -> SweepResult:
    """estimate_prefactor over eps_grid, then the K0/K1 fit against K0 from the limit diffusion."""
    eps_grid = [float(e) for e in eps_grid]
    if len(eps_grid) < 3:
        raise ValueError("the sweep needs at least three eps values")
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError("eps_grid must be decreasing")
    records = [estimate_prefactor(model, F, H, sol, e, n, seed, h, dt, workers, localize) for e in eps_grid]
    if k0 is None and H.is_builtin:
        k0 = estimate_k0(F, H, model, sol, k0_samples or n, seed, workers=workers)
    fit = fit_prefactors([r.eps for r in records], [r.prefactor_mean for r in records],
                         [r.prefactor_se for r in records],
                         k0.value if k0 else math.nan, k0.se if k0 else math.nan)
    return SweepResult(records, fit, k0)


# ----------------------------------------------------------------- diagnostics

def rough_ld_check(records: Sequence[EstimateRecord]) -> dict:
    """eps * total log-estimate against F(phi0) - S(phi0).

    The deviation is eps*ln(prefactor); ``shrinking`` holds when every
    |deviation| is at most the previous one plus two combined standard errors.
    """
    if len(records) < 2:
        raise ValueError("need at least two records")
    recs = sorted(records, key=lambda r: -r.eps)
    rows = []
    for r in recs:
        dev = r.eps * math.log(r.prefactor_mean) if r.prefactor_mean > 0 else math.inf
        se = r.eps * r.total_log_se
        rows.append(dict(eps=r.eps, eps_log_total=r.eps * r.total_log, deviation=dev, se=se))
    shrinking = all(abs(b["deviation"]) <= abs(a["deviation"]) + 2 * math.hypot(a["se"], b["se"])
                    for a, b in zip(rows, rows[1:]))
    return dict(rows=rows, shrinking=shrinking)


class _SupObserver(Observer):
    def __init__(self, m, phi0):
        super().__init__(m)
        self.sup = np.zeros(m)
        self.phi0 = phi0

    def segment(self, idx, t0, t1, x0, x1, z, g0):
        d = np.maximum(np.abs(x0 - self.phi0(t0)), np.abs(x1 - self.phi0(t1)))
        self.sup[idx] = np.maximum(self.sup[idx], d)

    def jump(self, idx, t, x_left, x_new, z):
        self.sup[idx] = np.maximum(self.sup[idx], np.abs(x_new - self.phi0(t)))

    def result(self):
        return dict(sup_dev=self.sup)


def tail_probability(model: ProcessModel, sol: ExtremalSolution, eps: float, n: int, seed: int,
                     radius: Optional[float] = None, dt: Optional[float] = None, workers: int = 1):
    """Fraction (and SE) of tilted paths with sup|eta| >= radius (default eps^{-1/2})."""
    radius = eps ** -0.5 if radius is None else float(radius)
    if radius <= 0:
        return 1.0, 0.0
    if math.isinf(radius):
        return 0.0, 0.0
    cfg = SimConfig(eps=eps, dt=dt, seed=seed, workers=workers)
    res = simulate_batch(model, cfg, n, tilt=sol.z0, observer_factory=lambda p0, m: _SupObserver(m, sol.phi0))
    hit = res.extra["sup_dev"] / math.sqrt(eps) >= radius
    p = float(np.mean(hit))
    return p, math.sqrt(p * (1 - p) / n)


class _EtaAtObserver(Observer):
    def __init__(self, m, phi0, eps, times):
        super().__init__(m)
        self.phi0, self.rs, self.times = phi0, 1 / math.sqrt(eps), times
        self.vals = np.full((len(times), m), np.nan)

    def segment(self, idx, t0, t1, x0, x1, z, g0):
        for j, tm in enumerate(self.times):
            hit = t1 == tm
            if hit.any():
                self.vals[j, idx[hit]] = (x1[hit] - self.phi0(tm)) * self.rs

    def result(self):
        return {f"eta_{j}": self.vals[j] for j in range(len(self.times))}


def moment_check(model: ProcessModel, sol: ExtremalSolution, k: int, eps_grid: Sequence[float], n: int, seed: int,
                 dt: Optional[float] = None, workers: int = 1, bound_factor: float = 3.0) -> dict:
    """Empirical E|eta_t|^k at t in {T/4, T/2, T} under the tilt, per eps.

    ``bounded`` is True when, for each t, every value is at most
    ``bound_factor`` times the value at the first (largest) eps.
    """
    if k % 2 or k < 0 or k > 8:
        raise ValueError("k must be even and at most 8")
    T = model.T
    rows = []
    for eps in eps_grid:
        if k == 0:
            for t in (T / 4, T / 2, T):
                rows.append(dict(eps=eps, t=t, moment=1.0, se=0.0))
            continue
        cfg = SimConfig(eps=eps, dt=dt, seed=seed, workers=workers)
        ns = cfg.steps(T)
        times = [T * round(ns * f) / ns for f in (0.25, 0.5)] + [T]
        res = simulate_batch(model, cfg, n, tilt=sol.z0,
                             observer_factory=lambda p0, m: _EtaAtObserver(m, sol.phi0, eps, times))
        for j, t in enumerate(times):
            v = np.abs(res.extra[f"eta_{j}"]) ** k
            mean, se = _mean_se(v)
            rows.append(dict(eps=eps, t=t, moment=mean, se=se))
    bounded = True
    first = eps_grid[0]
    for t in sorted({r["t"] for r in rows}):
        ref = [r["moment"] for r in rows if r["t"] == t and r["eps"] == first][0]
        vals = [r["moment"] for r in rows if r["t"] == t]
        if max(vals) > bound_factor * ref:
            bounded = False
    return dict(rows=rows, bounded=bounded)


def tilde_eta_transform(path, g, n_quad: int = 20000):
    """Multiply a path by exp{-int_0^t g(s) ds} (cumulative trapezoid on a fine grid)."""
    T = float(path.T) if isinstance(path, (SamplePath, PathGrid)) else None
    s = T * np.arange(n_quad + 1) / n_quad
    gs = np.asarray(g(s), dtype=float) + 0 * s
    cum = cumulative_trapezoid(gs, s, initial=0.0)
    if isinstance(path, SamplePath):
        f = np.exp(-np.interp(path.t, s, cum))
        return SamplePath(path.t, f * path.x, f * path.x_left, path.is_jump, f * path.jump_size, path.eps,
                          path.int_z_dxi, path.int_g0_dt, dict(path.meta, tilde=True))
    if isinstance(path, PathGrid):
        return PathGrid(path.T, np.exp(-np.interp(path.t, s, cum)) * path.values)
    raise TypeError("tilde_eta_transform expects a SamplePath or PathGrid")
