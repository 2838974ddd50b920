"""Simulation of the original, tilted and rescaled processes and of the limit diffusion.

Scheme
------
Coefficients, jump intensity and tilt are frozen at the left end of each
skeleton interval.  The skeleton is the uniform mesh together with every
thinning candidate (accepted jumps are a subset of the candidates).  Within a
frozen interval the continuous part moves by ``drift*tau + sqrt(eps*a*tau)*N``
and candidates arrive at rate ``M`` (the per-path majorant); a candidate is
accepted with probability ``lambda/M``.  Because every ingredient is frozen on
the interval, the weight

    pi = exp{ eps^-1 [ sum z_k dxi_k - sum G0(t_k, xi_k; z_k) tau_k ] }

is exactly the likelihood ratio of the tilted scheme against the original
scheme, so importance-sampling estimates are unbiased for the discretized
process.

Random numbers come from counters ``(path, step/event, sub, purpose)`` of a
Philox generator keyed by the seed, so a path depends only on its index.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import EnvelopeExceeded, NegativeDiffusion
from .model import ProcessModel, check_overflow, g0_mixed
from .paths import PathGrid, SamplePath, TiltPath, sup_norm  # noqa: F401  (sup_norm re-exported)
from .rng import LIMIT, CounterRNG, float_tag

CHUNK = 16384


@dataclass
class SimConfig:
    eps: float
    dt: Optional[float] = None
    seed: int = 0
    envelope_margin: float = 1.5
    retry_budget: int = 100
    workers: int = 1

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.envelope_margin < 1:
            raise ValueError("envelope margin must be >= 1")

    def steps(self, T: float) -> int:
        dt = self.dt if self.dt is not None else T / 2000
        return max(1, int(round(T / dt)))

    def rng(self) -> CounterRNG:
        return CounterRNG(self.seed, float_tag(self.eps))


class Observer:
    """Per-chunk hooks; subclasses accumulate path functionals.

    ``idx`` indexes paths inside the chunk; times may differ per element.
    """

    def __init__(self, m: int):
        self.m = m

    def segment(self, idx, t0, t1, x0, x1, z, g0):
        """Frozen interval [t0, t1) starting at x0 and ending (left limit) at x1.

        ``z`` is the frozen tilt and ``g0`` the frozen G0(t0, x0; z) (both
        None for the original process).
        """

    def jump(self, idx, t, x_left, x_new, z):
        pass

    def finish(self, x, t_end):
        pass

    def result(self) -> dict:
        return {}


class _Recorder(Observer):
    """Keeps the full skeleton of every path (meant for small batches)."""

    def __init__(self, m, t_start, x0):
        super().__init__(m)
        self.rows = [[[t_start, float(x0[i]), float(x0[i]), False, 0.0]] for i in range(m)]

    def segment(self, idx, t0, t1, x0, x1, z, g0):
        for i, a, b in zip(idx, t1, x1):
            self.rows[i].append([float(a), float(b), float(b), False, 0.0])

    def jump(self, idx, t, x_left, x_new, z):
        for i, b in zip(idx, x_new):
            row = self.rows[i][-1]
            row[1] = float(b)
            row[3] = True
            row[4] = float(b) - row[2]


@dataclass
class BatchResult:
    x_T: np.ndarray
    n_jumps: np.ndarray
    int_z_dxi: np.ndarray
    int_g0_dt: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def log_weight(self):
        """log(dP/dQ) per path; multiply by 1/eps is already included."""
        return self.extra["log_weight"]


def _tilt_fn(tilt):
    if tilt is None:
        return None
    if isinstance(tilt, (int, float)):
        c = float(tilt)
        return lambda t: np.full(np.shape(t), c)
    return tilt


def _run_chunk(model: ProcessModel, cfg: SimConfig, tilt, p0: int, m: int, x0, t_start: float,
               t_end: float, n_steps: int, observer: Optional[Observer]):
    eps = cfg.eps
    rng = cfg.rng()
    ids = np.arange(p0, p0 + m, dtype=np.uint64)
    zf = _tilt_fn(tilt)
    x = np.array(np.broadcast_to(np.asarray(x0, dtype=float), (m,)), dtype=float)
    nodes, _ = model.nu.nodes_weights(0.0, 0.0)
    has_jumps = len(nodes) > 0
    has_diff = model.has_diffusion
    margin = cfg.envelope_margin
    iz = np.zeros(m)
    ig = np.zeros(m)
    nj = np.zeros(m, dtype=np.int64)
    ev = np.zeros(m, dtype=np.int64)          # next event block index
    R = np.zeros(m)
    M = np.zeros(m)
    M_peak = np.zeros(m)
    expansions = np.zeros(m, dtype=np.int64)
    if has_jumps:
        clock, _, _ = rng.event(ids, np.zeros(m, dtype=np.uint64))
        R = -np.log(clock)
        ev[:] = 1
    span = t_end - t_start

    def rates(tt, xx, zz):
        u, w = model.nu.nodes_weights(tt, xx)
        if zz is None:
            wt = w
        else:
            check_overflow(zz, model.nu.support)
            wt = w * np.exp(np.outer(u, zz))
        return u, w, wt, wt.sum(axis=0) / eps

    for k in range(n_steps):
        tk = t_start + span * k / n_steps
        tk1 = t_start + span * (k + 1) / n_steps
        tcur = np.full(m, tk)
        sub = np.zeros(m, dtype=np.uint64)
        act = np.arange(m)
        while act.size:
            tt, xx = tcur[act], x[act]
            zz = None if zf is None else np.asarray(zf(tt), dtype=float) + 0 * tt
            al = model.alpha(tt, xx) + 0 * tt
            aa = model.a(tt, xx) + 0 * tt if has_diff else None
            drift = al.copy()
            if aa is not None and zz is not None:
                drift = drift + aa * zz
            if has_jumps:
                u, w, wt, lam = rates(tt, xx, zz)
                drift = drift - np.tensordot(u, w, axes=(0, 0))
                Mi = M[act]
                grow = lam > Mi
                if grow.any():
                    newM = margin * lam
                    beyond = grow & (newM > M_peak[act])
                    if beyond.any():
                        ex = expansions[act] + beyond
                        if np.any(ex > cfg.retry_budget):
                            raise EnvelopeExceeded("jump-rate majorant re-expanded beyond the retry budget")
                        expansions[act] = ex
                    Mi = np.where(grow, newM, Mi)
                shrink = lam * margin * margin < Mi
                Mi = np.where(shrink, margin * lam, Mi)
                M[act] = Mi
                M_peak[act] = np.maximum(M_peak[act], Mi)
                with np.errstate(divide="ignore"):
                    tc = np.where(Mi > 0, tt + R[act] / np.where(Mi > 0, Mi, 1.0), np.inf)
                cand = tc < tk1
                tn = np.where(cand, tc, tk1)
            else:
                cand = np.zeros(act.size, dtype=bool)
                tn = np.full(act.size, tk1)
            tau = tn - tt
            dx = drift * tau
            if aa is not None:
                if np.any(aa < 0):
                    raise NegativeDiffusion("a(t, x) < 0 met during simulation")
                dx = dx + np.sqrt(eps * aa * tau) * rng.normal(ids[act], np.uint64(k), sub[act])
                sub[act] += np.uint64(1)
            xl = xx + dx
            gval = None
            if zz is not None:
                gval = g0_mixed(model, tt, xx, zz, 0, 0)
                iz[act] += zz * dx
                ig[act] += gval * tau
            if observer is not None:
                observer.segment(act, tt, tn, xx, xl, zz, gval)
            x[act] = xl
            tcur[act] = tn
            if has_jumps:
                R[act] = np.where(cand, 0.0, R[act] - Mi * tau)
                if cand.any():
                    ci = np.flatnonzero(cand)
                    pa = act[ci]
                    _, acc, choice = rng.event(ids[pa], ev[pa].astype(np.uint64))
                    nxt, _, _ = rng.event(ids[pa], (ev[pa] + 1).astype(np.uint64))
                    R[pa] = -np.log(nxt)
                    ev[pa] += 2
                    take = acc * Mi[ci] < lam[ci]
                    if take.any():
                        ti = ci[take]
                        pj = act[ti]
                        cw = np.cumsum(wt[:, ti], axis=0)
                        target = choice[take] * cw[-1]
                        j = np.minimum(np.sum(cw <= target[None, :], axis=0), len(u) - 1)
                        jump = eps * u[j]
                        xl_j = x[pj].copy()
                        x[pj] = xl_j + jump
                        nj[pj] += 1
                        if zz is not None:
                            iz[pj] += zz[ti] * jump
                        if observer is not None:
                            observer.jump(pj, tn[ti], xl_j, x[pj], None if zz is None else zz[ti])
            act = act[cand]
    if observer is not None:
        observer.finish(x, t_end)
    lw = -(iz - ig) / eps
    return BatchResult(x, nj, iz, ig, dict(log_weight=lw, expansions=expansions))


def _concat(parts):
    out = BatchResult(*(np.concatenate([getattr(p, f) for p in parts])
                        for f in ("x_T", "n_jumps", "int_z_dxi", "int_g0_dt")))
    keys = parts[0].extra.keys()
    for key in keys:
        vals = [p.extra[key] for p in parts]
        if isinstance(vals[0], np.ndarray):
            out.extra[key] = np.concatenate(vals)
        else:
            out.extra[key] = vals
    return out


def simulate_batch(model: ProcessModel, cfg: SimConfig, n: int, tilt=None, x0=None, t_end=None,
                   observer_factory: Optional[Callable[[int, int], Observer]] = None,
                   path_offset: int = 0, chunk: int = CHUNK) -> BatchResult:
    """Simulate paths ``path_offset .. path_offset+n-1``.

    ``tilt`` is None (original process), a constant, a TiltPath or any
    callable z(t).  ``observer_factory(p0, m)`` builds a per-chunk observer
    whose ``result()`` dict entries are concatenated into ``extra``.  The
    chunk size is fixed so results do not depend on ``cfg.workers``.
    """
    T = model.T if t_end is None else float(t_end)
    n_steps = cfg.steps(T)
    x0 = model.x0 if x0 is None else x0
    x0_arr = np.asarray(x0, dtype=float)
    starts = list(range(0, n, chunk))

    def task(s):
        m = min(chunk, n - s)
        xs = x0_arr if x0_arr.ndim == 0 else x0_arr[s:s + m]
        obs = observer_factory(path_offset + s, m) if observer_factory else None
        res = _run_chunk(model, cfg, tilt, path_offset + s, m, xs, 0.0, T, n_steps, obs)
        if obs is not None:
            res.extra.update(obs.result())
        return res

    if cfg.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            parts = list(ex.map(task, starts))
    else:
        parts = [task(s) for s in starts]
    return _concat(parts)


def _single(model, cfg, tilt, path_id, x0=None):
    x0 = model.x0 if x0 is None else x0
    rec = _Recorder(1, 0.0, np.array([x0], dtype=float))
    res = _run_chunk(model, cfg, tilt, path_id, 1, x0, 0.0, model.T, cfg.steps(model.T), rec)
    rows = rec.rows[0]
    t = np.array([r[0] for r in rows])
    x = np.array([r[1] for r in rows])
    xl = np.array([r[2] for r in rows])
    isj = np.array([r[3] for r in rows], dtype=bool)
    js = np.array([r[4] for r in rows])
    return SamplePath(t, x, xl, isj, js, cfg.eps, float(res.int_z_dxi[0]), float(res.int_g0_dt[0]),
                      dict(path_id=path_id, seed=cfg.seed))


def simulate_original(model: ProcessModel, cfg: SimConfig, path_id: int = 0, x0=None) -> SamplePath:
    """One path of the original process (index ``path_id`` of the seed's stream)."""
    return _single(model, cfg, None, path_id, x0)


def simulate_tilted(model: ProcessModel, z0, cfg: SimConfig, path_id: int = 0, x0=None) -> SamplePath:
    """One path under the Cramer tilt z0 (TiltPath, callable or constant).

    Jump intensity eps^-1 e^{z u} nu, drift dG0/dz - int u e^{zu} nu, diffusion
    eps*a; the accumulators hold int z dxi and int G0(t, xi; z) dt.  With
    z0 = 0 the path coincides with ``simulate_original`` for the same seed.
    """
    return _single(model, cfg, z0 if z0 is not None else 0.0, path_id, x0)


def rescale_to_eta(path: SamplePath, phi0, eps: float) -> SamplePath:
    """eta = eps^{-1/2} (xi - phi0) on the skeleton of ``path``."""
    r = 1.0 / math.sqrt(eps)
    ph = np.asarray(phi0(path.t), dtype=float) + 0 * path.t
    return SamplePath(path.t, r * (path.x - ph), r * (path.x_left - ph), path.is_jump, r * path.jump_size,
                      eps, path.int_z_dxi, path.int_g0_dt, dict(path.meta, rescaled=True))


# ------------------------------------------------------------------ limit diffusion

def _vec(f, t):
    return np.asarray(f(t), dtype=float) + 0 * t


def limit_transitions(A, g, t):
    """Per-step mean factors and variances of d eta = g eta dt + sqrt(A) dW.

    Simpson's rule on each step for int g and for int e^{2 int_s g} A(s) ds.
    """
    t = np.asarray(t, dtype=float)
    t0, t1 = t[:-1], t[1:]
    h = t1 - t0
    tm = 0.5 * (t0 + t1)
    tq = t0 + 0.75 * h
    g0, gm, gq, g1 = _vec(g, t0), _vec(g, tm), _vec(g, tq), _vec(g, t1)
    A0, Am, A1 = _vec(A, t0), _vec(A, tm), _vec(A, t1)
    if min(A0.min(), Am.min(), A1.min()) < 0:
        raise NegativeDiffusion("A(t) < 0 in the limit diffusion")
    G_full = h / 6 * (g0 + 4 * gm + g1)
    G_half = h / 12 * (gm + 4 * gq + g1)
    var = h / 6 * (np.exp(2 * G_full) * A0 + 4 * np.exp(2 * G_half) * Am + A1)
    return np.exp(G_full), np.maximum(var, 0.0)


def limit_eta_batch(A, g, T: float, n_steps: int, n: int, seed: int, x0=0.0,
                    observer_factory: Optional[Callable[[int, int], Observer]] = None,
                    chunk: int = CHUNK, workers: int = 1, tag: int = 0):
    """Exact-transition paths of the limit diffusion; returns (eta_T, extra).

    Observers receive scalar step times (all paths share the mesh).
    """
    t = T * np.arange(n_steps + 1) / n_steps
    fac, var = limit_transitions(A, g, t)
    sd = np.sqrt(var)
    rng = CounterRNG(seed, LIMIT, tag)
    x0_arr = np.asarray(x0, dtype=float)
    starts = list(range(0, n, chunk))

    def task(s):
        m = min(chunk, n - s)
        ids = np.arange(s, s + m, dtype=np.uint64)
        eta = np.array(np.broadcast_to(x0_arr if x0_arr.ndim == 0 else x0_arr[s:s + m], (m,)), dtype=float)
        obs = observer_factory(s, m) if observer_factory else None
        allidx = np.arange(m)
        for k in range(n_steps):
            new = fac[k] * eta + sd[k] * rng.normal(ids, np.uint64(k), np.uint64(0), LIMIT)
            if obs is not None:
                obs.segment(allidx, t[k], t[k + 1], eta, new, None, None)
            eta = new
        if obs is not None:
            obs.finish(eta, T)
        return eta, (obs.result() if obs is not None else {})

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(task, starts))
    else:
        parts = [task(s) for s in starts]
    eta_T = np.concatenate([p[0] for p in parts])
    extra = {}
    if parts and parts[0][1]:
        for key in parts[0][1]:
            extra[key] = np.concatenate([p[1][key] for p in parts])
    return eta_T, extra


def simulate_limit_eta(A, g, cfg: SimConfig, x: float = 0.0, T: float = 1.0, path_id: int = 0) -> SamplePath:
    """One exact-transition path of d eta = g(t) eta dt + sqrt(A(t)) dW on the mesh."""
    n_steps = cfg.steps(T)
    t = T * np.arange(n_steps + 1) / n_steps
    fac, var = limit_transitions(A, g, t)
    rng = CounterRNG(cfg.seed, LIMIT, 0)
    z = rng.normal(np.full(n_steps, path_id, dtype=np.uint64), np.arange(n_steps, dtype=np.uint64),
                   np.uint64(0), LIMIT)
    eta = np.empty(n_steps + 1)
    eta[0] = x
    for k in range(n_steps):
        eta[k + 1] = fac[k] * eta[k] + math.sqrt(var[k]) * z[k]
    zeros = np.zeros(n_steps + 1)
    return SamplePath(t, eta, eta.copy(), zeros.astype(bool), zeros, cfg.eps, meta=dict(limit=True))


def dump_path_csv(path: SamplePath, filename) -> None:
    """Write t, value, is_jump, jump_size (one row per skeleton point)."""
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "value", "is_jump", "jump_size"])
        for a, b, c, d in zip(path.t, path.x, path.is_jump, path.jump_size):
            w.writerow(["%.17g" % a, "%.17g" % b, int(c), "%.17g" % d])
