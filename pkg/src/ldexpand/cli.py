"""Command-line entry point: ``ldexpand {variational,sweep,pide,report}``.

Configuration comes from defaults, then an optional YAML/JSON file
(``--config``), then command-line flags.  Exit codes: 0 ok, 1 config,
2 variational, 3 estimator, 4 pide, 5 report.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
from typing import Optional

import numpy as np
import yaml

from . import expr
from .errors import (BoundaryLeak, ConfigError, EstimatorError, MissingArtifacts, PideError,
                     StabilityViolation, VariationalError)
from .expansion import epsilon_sweep, rough_ld_check
from .functionals import FunctionalSpec, IntegralTerm, TerminalTerm, functional_preset
from .model import AtomList, Density, ProcessModel, model_preset
from .pide import Grid1D, asymptotic_compare, gaussian_bump, one, specific_case_check
from .simulate import SimConfig, dump_path_csv, simulate_tilted
from .variational import euler_lagrange_shoot, maximize_direct, refine_and_extrapolate

EXIT_OK, EXIT_CONFIG, EXIT_VARIATIONAL, EXIT_ESTIMATOR, EXIT_PIDE, EXIT_REPORT = range(6)

DEFAULTS = {
    "model": "example1",
    "F": "example1-F",
    "H": "H-one",
    "seed": 0,
    "workers": 1,
    "out": "out",
    "dump_paths": 0,
    "solver": {"grid_n": 200, "multistarts": 5, "tol": 1e-7, "refine": True, "levels": 3},
    "sweep": {"eps_list": [0.4, 0.2, 0.1, 0.05], "samples": 100000, "h": 0.5, "localize": False,
              "k0_samples": None, "dt": None},
    "pide": {"model": "pide-special", "eps": 0.5, "t_end": 1.0, "x_min": None, "x_max": None, "nx": None,
             "nt": None, "g": "gaussian", "c": 1.0, "n_mc": 100000, "eps_list": [0.4, 0.2, 0.1, 0.05],
             "dt": None},
}

SECTIONS = ("solver", "sweep", "pide")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return "%.17g" % float(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------ config

def _merge(base, over, where=""):
    for k, v in over.items():
        key = f"{where}.{k}" if where else k
        if k not in base:
            raise ConfigError(f"unknown config field {key!r}")
        if k in SECTIONS:
            if not isinstance(v, dict):
                raise ConfigError(f"config field {key!r} must be a mapping")
            _merge(base[k], v, key)
        else:
            base[k] = v


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ConfigError(f"{path}: {loc}{getattr(exc, 'problem', exc)}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _number(cfg, section, key, kind=float, positive=False, allow_none=False):
    d = cfg[section] if section else cfg
    v = d[key]
    name = f"{section}.{key}" if section else key
    if v is None and allow_none:
        return None
    try:
        if isinstance(v, bool):
            raise TypeError
        out = kind(v)
        if kind is int and out != float(v):
            raise ValueError
    except (TypeError, ValueError):
        raise ConfigError(f"config field {name!r} must be {'an integer' if kind is int else 'a number'}, got {v!r}") from None
    if positive and not out > 0:
        raise ConfigError(f"config field {name!r} must be positive, got {v!r}")
    return out


def _eps_list(v, name):
    if isinstance(v, str):
        v = [s for s in v.replace(",", " ").split()]
    try:
        out = [float(e) for e in v]
    except (TypeError, ValueError):
        raise ConfigError(f"config field {name!r} must be a list of numbers") from None
    if not out or any(not e > 0 for e in out):
        raise ConfigError(f"config field {name!r} must hold positive values")
    return out


def build_model(spec, field="model") -> ProcessModel:
    """Preset name or an inline mapping {alpha, a, nu, T, x0}."""
    if isinstance(spec, str):
        try:
            return model_preset(spec)
        except KeyError as exc:
            raise ConfigError(f"config field {field!r}: {exc.args[0]}") from None
    if not isinstance(spec, dict):
        raise ConfigError(f"config field {field!r} must be a preset name or a mapping")
    allowed = {"alpha", "a", "nu", "T", "x0", "name"}
    bad = set(spec) - allowed
    if bad:
        raise ConfigError(f"unknown config field {field}.{sorted(bad)[0]!r}")

    def coef(key, default):
        try:
            return expr.coefficient(spec.get(key, default), key)
        except ConfigError as exc:
            raise ConfigError(f"config field {field}.{key}: {exc}") from None

    alpha, a = coef("alpha", 0.0), coef("a", 0.0)
    nu_spec = spec.get("nu") or {}
    if not isinstance(nu_spec, dict):
        raise ConfigError(f"config field {field}.nu must be a mapping")
    if "atoms" in nu_spec:
        atoms = []
        for i, item in enumerate(nu_spec["atoms"]):
            if not isinstance(item, (list, tuple)) or len(item) != 2:
                raise ConfigError(f"config field {field}.nu.atoms[{i}] must be [size, weight]")
            try:
                atoms.append((float(item[0]), expr.coefficient(item[1])))
            except (ConfigError, TypeError, ValueError) as exc:
                raise ConfigError(f"config field {field}.nu.atoms[{i}]: {exc}") from None
        nu = AtomList(atoms)
    elif "density" in nu_spec:
        try:
            e = expr.parse(nu_spec["density"], ("t", "x", "u"))
            f = expr.to_function(e, ("t", "x", "u"))
            support = float(nu_spec.get("support", 1.0))
            order = int(nu_spec.get("order", 32))
        except (ConfigError, TypeError, ValueError) as exc:
            raise ConfigError(f"config field {field}.nu.density: {exc}") from None
        const = not ({str(s) for s in e.free_symbols} & {"t", "x"})
        nu = Density(f, support, order, constant_in_tx=const)
    elif nu_spec:
        raise ConfigError(f"config field {field}.nu needs 'atoms' or 'density'")
    else:
        nu = AtomList([])
    try:
        return ProcessModel(alpha, a, nu, T=float(spec.get("T", 1.0)), x0=float(spec.get("x0", 0.0)),
                            name=str(spec.get("name", "custom")))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config field {field}: {exc}") from None


def build_functional(spec, field) -> FunctionalSpec:
    """Preset ``name[:param]`` or an inline mapping {integral: g(t, y), terminal: h(y)}."""
    if isinstance(spec, str):
        try:
            return functional_preset(spec)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"config field {field!r}: {exc.args[0]}") from None
    if not isinstance(spec, dict):
        raise ConfigError(f"config field {field!r} must be a preset name or a mapping")
    bad = set(spec) - {"integral", "terminal"}
    if bad:
        raise ConfigError(f"unknown config field {field}.{sorted(bad)[0]!r}")
    terms = []
    try:
        if "integral" in spec:
            fs = expr.derivatives(spec["integral"], "y", ("t", "y"), 4)
            terms.append(IntegralTerm(fs[0], tuple(fs[1:]), str(spec["integral"])))
        if "terminal" in spec:
            fs = expr.derivatives(spec["terminal"], "y", ("y",), 4)
            terms.append(TerminalTerm(fs[0], tuple(fs[1:]), str(spec["terminal"])))
    except ConfigError as exc:
        raise ConfigError(f"config field {field}: {exc}") from None
    return FunctionalSpec(terms, "inline")


def build_g(spec):
    if spec in ("gaussian", None):
        return gaussian_bump
    if spec == "one":
        return one
    try:
        f = expr.to_function(expr.parse(spec, ("x",)), ("x",))
    except ConfigError as exc:
        raise ConfigError(f"config field 'pide.g': {exc}") from None
    return f


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        _merge(cfg, load_config_file(args.config))
    flag_map = {
        "model": ("", "model"), "F": ("", "F"), "H": ("", "H"), "seed": ("", "seed"),
        "workers": ("", "workers"), "out": ("", "out"), "dump_paths": ("", "dump_paths"),
        "grid_n": ("solver", "grid_n"), "multistarts": ("solver", "multistarts"),
        "eps_list": ("sweep", "eps_list"), "samples": ("sweep", "samples"), "h": ("sweep", "h"),
        "localize": ("sweep", "localize"), "k0_samples": ("sweep", "k0_samples"), "dt": ("sweep", "dt"),
        "preset": ("pide", "model"), "eps": ("pide", "eps"), "g": ("pide", "g"), "c": ("pide", "c"),
        "t_end": ("pide", "t_end"), "x_min": ("pide", "x_min"), "x_max": ("pide", "x_max"),
        "nx": ("pide", "nx"), "nt": ("pide", "nt"), "pide_eps_list": ("pide", "eps_list"),
        "n_mc": ("pide", "n_mc"),
    }
    for dest, (sec, key) in flag_map.items():
        v = getattr(args, dest, None)
        if v is not None:
            (cfg[sec] if sec else cfg)[key] = v
    if getattr(args, "command", None) == "pide" and getattr(args, "samples", None) is not None:
        cfg["pide"]["n_mc"] = args.samples
    if getattr(args, "command", None) == "pide" and getattr(args, "eps_list", None) is not None:
        cfg["pide"]["eps_list"] = args.eps_list
    # validation
    if cfg["seed"] is None:
        raise ConfigError("config field 'seed' is required")
    cfg["seed"] = _number(cfg, "", "seed", int)
    if cfg["seed"] < 0:
        raise ConfigError("config field 'seed' must be non-negative")
    cfg["workers"] = _number(cfg, "", "workers", int, positive=True)
    cfg["dump_paths"] = _number(cfg, "", "dump_paths", int)
    for key in ("grid_n", "multistarts", "levels"):
        cfg["solver"][key] = _number(cfg, "solver", key, int, positive=True)
    cfg["solver"]["tol"] = _number(cfg, "solver", "tol", positive=True)
    cfg["sweep"]["eps_list"] = _eps_list(cfg["sweep"]["eps_list"], "sweep.eps_list")
    cfg["sweep"]["samples"] = _number(cfg, "sweep", "samples", int, positive=True)
    cfg["sweep"]["h"] = _number(cfg, "sweep", "h", positive=True)
    cfg["sweep"]["k0_samples"] = _number(cfg, "sweep", "k0_samples", int, positive=True, allow_none=True)
    cfg["sweep"]["dt"] = _number(cfg, "sweep", "dt", positive=True, allow_none=True)
    p = cfg["pide"]
    p["eps"] = _number(cfg, "pide", "eps", positive=True)
    p["t_end"] = _number(cfg, "pide", "t_end", positive=True)
    p["c"] = _number(cfg, "pide", "c")
    p["n_mc"] = _number(cfg, "pide", "n_mc", int)
    p["dt"] = _number(cfg, "pide", "dt", positive=True, allow_none=True)
    for key in ("x_min", "x_max"):
        p[key] = _number(cfg, "pide", key, allow_none=True)
    for key in ("nx", "nt"):
        p[key] = _number(cfg, "pide", key, int, positive=True, allow_none=True)
    p["eps_list"] = _eps_list(p["eps_list"], "pide.eps_list")
    return cfg


# ------------------------------------------------------------------ commands

def _solve(cfg, model, F):
    s = cfg["solver"]
    kw = dict(multistarts=s["multistarts"], workers=cfg["workers"], tol=s["tol"])
    ref = None
    if s["refine"] and not F.is_zero:
        base = max(2, s["grid_n"] // 2 ** (s["levels"] - 1))
        ref = refine_and_extrapolate(lambda n, prev: maximize_direct(F, model, n=n, previous=prev, **kw),
                                     n=base, levels=s["levels"])
        sol = ref.solutions[-1]
    else:
        sol = maximize_direct(F, model, n=s["grid_n"], **kw)
    return sol, ref


def cmd_variational(cfg) -> int:
    model = build_model(cfg["model"])
    F = build_functional(cfg["F"], "F")
    os.makedirs(cfg["out"], exist_ok=True)
    sol, ref = _solve(cfg, model, F)
    shoot = math.nan
    try:
        shoot = euler_lagrange_shoot(F, model).gap
    except VariationalError:
        pass
    t = sol.phi0.t
    write_csv(os.path.join(cfg["out"], "extremal.csv"), ["t", "phi0", "z0"],
              zip(t, sol.phi0.values, sol.z0(t)))
    d = sol.diagnostics
    header = ["value_F", "value_S", "gap", "gap_extrapolated", "extrapolation_error", "refinement_order",
              "gap_shooting", "multistart_spread", "grad_norm", "natural_bc_residual", "z0_T",
              "second_variation_max", "grid_n"]
    row = [sol.value_F, sol.value_S, sol.gap, ref.extrapolated if ref else sol.gap,
           ref.error_estimate if ref else math.nan, ref.order if ref else math.nan, shoot,
           d.get("multistart_spread", math.nan), d.get("grad_norm", math.nan),
           d.get("natural_bc_residual", math.nan), float(sol.z0(model.T)),
           d.get("second_variation_max", math.nan), sol.phi0.n]
    write_csv(os.path.join(cfg["out"], "extremal_summary.csv"), header, [row])
    print(f"gap = {fmt(sol.gap)}  (extrapolated {fmt(row[3])}, shooting {fmt(shoot)})")
    print(f"F(phi0) = {fmt(sol.value_F)}  S(phi0) = {fmt(sol.value_S)}  z0(T) = {fmt(row[10])}")
    return EXIT_OK


def cmd_sweep(cfg) -> int:
    model = build_model(cfg["model"])
    F = build_functional(cfg["F"], "F")
    H = build_functional(cfg["H"], "H")
    os.makedirs(cfg["out"], exist_ok=True)
    sol, _ = _solve(cfg, model, F)
    s = cfg["sweep"]
    res = epsilon_sweep(model, F, H, sol, s["eps_list"], s["samples"], cfg["seed"], h=s["h"], dt=s["dt"],
                        workers=cfg["workers"], k0_samples=s["k0_samples"], localize=bool(s["localize"]))
    write_csv(os.path.join(cfg["out"], "sweep.csv"),
              ["eps", "n_samples", "log_leading", "prefactor", "se", "clipped", "clipped_fraction",
               "total_log", "total_log_se", "h", "localized"],
              [[r.eps, r.n_samples, r.log_leading, r.prefactor_mean, r.prefactor_se, r.n_clipped,
                r.clipped_fraction, r.total_log, r.total_log_se, r.h, bool(s["localize"])] for r in res.records])
    fit = res.fit
    k0lo, k0hi = fit.K0_ci
    k1lo, k1hi = fit.K1_ci
    mlo, mhi = fit.K0_mc_ci
    write_csv(os.path.join(cfg["out"], "fit.csv"),
              ["K0_mc", "K0_mc_se", "K0_mc_lo", "K0_mc_hi", "K0_fit", "K0_fit_lo", "K0_fit_hi",
               "K1_fit", "K1_fit_lo", "K1_fit_hi", "K2_fit", "intervals_overlap", "gap"],
              [[fit.K0_mc, fit.K0_mc_se, mlo, mhi, fit.K0_fit, k0lo, k0hi, fit.K1_fit, k1lo, k1hi,
                fit.K2_fit if fit.K2_fit is not None else math.nan, fit.intervals_overlap, sol.gap]])
    rough = rough_ld_check(res.records)
    by_eps = {r["eps"]: r for r in rough["rows"]}
    diag_rows = []
    for r in res.records:
        p = r.clipped_fraction
        rr = by_eps[r.eps]
        diag_rows.append([r.eps, p, math.sqrt(p * (1 - p) / r.n_samples), r.diagnostics.get("eta4_T", math.nan),
                          r.diagnostics.get("q2_mean", math.nan), r.diagnostics.get("taylor_residual_rms", math.nan),
                          r.diagnostics.get("inv_weight_mean", math.nan), rr["eps_log_total"], rr["deviation"], rr["se"]])
    write_csv(os.path.join(cfg["out"], "diagnostics.csv"),
              ["eps", "tail_probability", "tail_se", "eta4_T", "q2_mean", "taylor_residual_rms",
               "inv_weight_mean", "eps_log_total", "rough_ld_deviation", "rough_ld_se"], diag_rows)
    if cfg["dump_paths"] > 0:
        pdir = os.path.join(cfg["out"], "paths")
        os.makedirs(pdir, exist_ok=True)
        for e in s["eps_list"]:
            sc = SimConfig(eps=e, dt=s["dt"], seed=cfg["seed"])
            for i in range(cfg["dump_paths"]):
                dump_path_csv(simulate_tilted(model, sol.z0, sc, path_id=i),
                              os.path.join(pdir, f"tilted_eps{e:g}_path{i}.csv"))
    print(f"K0_mc  = {fmt(fit.K0_mc)} +- {fmt(1.959963984540054 * fit.K0_mc_se)}")
    print(f"K0_fit = {fmt(fit.K0_fit)}  CI [{fmt(k0lo)}, {fmt(k0hi)}]")
    print(f"K1_fit = {fmt(fit.K1_fit)}  CI [{fmt(k1lo)}, {fmt(k1hi)}]")
    return EXIT_OK


def cmd_pide(cfg) -> int:
    p = cfg["pide"]
    model = build_model(p["model"], "pide.model")
    g = build_g(p["g"])
    os.makedirs(cfg["out"], exist_ok=True)
    grid = None
    if any(p[k] is not None for k in ("x_min", "x_max", "nx", "nt")):
        x_min = p["x_min"] if p["x_min"] is not None else -8.0
        x_max = p["x_max"] if p["x_max"] is not None else 8.0
        nx = p["nx"] or int(round((x_max - x_min) / 0.02)) + 1
        nt = p["nt"] or max(4, int(math.ceil(400 * p["t_end"])))
        try:
            grid = Grid1D(x_min, x_max, nx, nt, p["eps"], p["t_end"])
        except ValueError as exc:
            raise ConfigError(f"config field 'pide': {exc}") from None
    probe_t = [t for t in (0.25, 0.5, 1.0) if t <= p["t_end"] + 1e-12]
    if p["t_end"] not in probe_t:
        probe_t.append(p["t_end"])
    chk = specific_case_check(grid, g, p["eps"], p["t_end"], p["n_mc"], cfg["seed"], model=model,
                              probe_t=probe_t, c=p["c"], dt=p["dt"], workers=cfg["workers"])
    rows = []
    for r in chk["rows"]:
        closed = math.exp(p["c"] * r["t"] / p["eps"])
        rows.append([r["t"], r["x"], r["fd"], r["mc"], r["mc_se"], r["factorized"], r["rel_disc"],
                     r["fact_err"], r["scaled"], closed, abs(r["fd"] / closed - 1)])
    write_csv(os.path.join(cfg["out"], "pide_compare.csv"),
              ["t", "x", "fd", "mc", "mc_se", "factorized", "rel_discrepancy", "factorization_error",
               "scaled", "exp_t_over_eps", "rel_to_exp"], rows)
    sol = chk["solution"]
    with open(os.path.join(cfg["out"], "pide_grid.csv"), "w") as fh:
        fh.write("t,x,value\n")
        for k, t in enumerate(sol.t):
            for x, v in zip(sol.x, sol.u[k]):
                fh.write(f"{fmt(t)},{fmt(x)},{fmt(v)}\n")
    asy = asymptotic_compare(p["eps_list"], g, model, probe_t=(p["t_end"],), c=p["c"])
    write_csv(os.path.join(cfg["out"], "pide_fit.csv"),
              ["t", "x", "k0", "k0_half_width", "k1", "k1_half_width", "limit", "k0_consistent"],
              [[r["t"], r["x"], r["k0"], r["k0_half"], r["k1"], r["k1_half"], r["limit"],
                abs(r["k0"] - r["limit"]) <= max(r["k0_half"], 1e-10 * max(1.0, abs(r["limit"])))
                if not math.isnan(r["k0_half"]) else False]
               for r in asy["rows"]])
    print(f"max FD/MC relative discrepancy = {fmt(chk['max_rel_discrepancy'])}")
    print(f"factorization error = {fmt(chk['factorization_error'])}  bounded = {chk['bounded']}")
    return EXIT_OK


def _read_required(out, names):
    return [n for n in names if not os.path.exists(os.path.join(out, n))]


def cmd_report(cfg) -> int:
    out = cfg["out"]
    groups = {
        "variational": ["extremal_summary.csv"],
        "sweep": ["sweep.csv", "fit.csv", "diagnostics.csv"],
        "pide": ["pide_compare.csv", "pide_fit.csv"],
    }
    present = {k: not _read_required(out, v) for k, v in groups.items()} if os.path.isdir(out) else {}
    if not any(present.values()):
        raise MissingArtifacts(f"no command outputs found in {out!r}")
    lines, failed = [], []
    if present.get("variational"):
        s = read_csv(os.path.join(out, "extremal_summary.csv"))[0]
        lines.append(f"gap {s['gap']} extrapolated {s['gap_extrapolated']} shooting {s['gap_shooting']}")
        if abs(float(s["z0_T"])) > 1e-6:
            failed.append("natural boundary condition z0(T) = 0")
    if present.get("sweep"):
        sweep = read_csv(os.path.join(out, "sweep.csv"))
        fit = read_csv(os.path.join(out, "fit.csv"))[0]
        diag = read_csv(os.path.join(out, "diagnostics.csv"))
        with open(os.path.join(out, "ld_prefactor.dat"), "w") as fh:
            fh.write("# eps_sqrt prefactor se\n")
            for r in sweep:
                fh.write(f"{fmt(math.sqrt(float(r['eps'])))} {r['prefactor']} {r['se']}\n")
        with open(os.path.join(out, "ld_rough.dat"), "w") as fh:
            fh.write("# eps eps_log_total\n")
            for r in diag:
                fh.write(f"{r['eps']} {r['eps_log_total']}\n")
        rows = sorted(diag, key=lambda r: -float(r["eps"]))
        monotone = all(abs(float(b["rough_ld_deviation"])) <= abs(float(a["rough_ld_deviation"]))
                       + 2 * math.hypot(float(a["rough_ld_se"]), float(b["rough_ld_se"]))
                       for a, b in zip(rows, rows[1:]))
        clipped = [float(r["tail_probability"]) for r in rows]
        m4 = [float(r["eta4_T"]) for r in rows]
        lines.append("eps,prefactor,se,rough_ld_deviation,rough_ld_se,tail_probability,eta4_T")
        for r in rows:
            pref = next(s["prefactor"] for s in sweep if s["eps"] == r["eps"])
            se = next(s["se"] for s in sweep if s["eps"] == r["eps"])
            lines.append(",".join([r["eps"], pref, se, r["rough_ld_deviation"], r["rough_ld_se"],
                                   r["tail_probability"], r["eta4_T"]]))
        lines.append(f"K0_mc {fit['K0_mc']} [{fit['K0_mc_lo']}, {fit['K0_mc_hi']}]")
        lines.append(f"K0_fit {fit['K0_fit']} [{fit['K0_fit_lo']}, {fit['K0_fit_hi']}]")
        lines.append(f"K1_fit {fit['K1_fit']} [{fit['K1_fit_lo']}, {fit['K1_fit_hi']}]")
        if not monotone:
            failed.append("rough-LD deviation not shrinking within error bands")
        if fit["intervals_overlap"] != "1":
            failed.append("K0_fit and K0_mc intervals do not overlap")
        if any(b > a for a, b in zip(clipped, clipped[1:])):
            failed.append("clipped fraction not decreasing in eps")
        if m4 and any(v > 3 * m4[0] for v in m4):
            failed.append("E|eta_T|^4 exceeds 3x its largest-eps value")
    if present.get("pide"):
        cmp_rows = read_csv(os.path.join(out, "pide_compare.csv"))
        disc = [float(r["rel_discrepancy"]) for r in cmp_rows if r["rel_discrepancy"] not in ("nan", "")]
        fe = max(float(r["factorization_error"]) for r in cmp_rows)
        lines.append(f"pide max FD/MC discrepancy {fmt(max(disc) if disc else math.nan)} factorization {fmt(fe)}")
        if disc and max(disc) >= 0.02:
            failed.append("FD/MC discrepancy >= 2%")
        if fe > 1e-6:
            failed.append("factorization identity off by more than 1e-6")
    lines.append("failed invariants: " + ("; ".join(failed) if failed else "none"))
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _bool(v):
    s = str(v).lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--model", help="model preset name")
    common.add_argument("--F", dest="F", help="functional F preset, e.g. terminal-linear:1")
    common.add_argument("--H", dest="H", help="functional H preset (default H-one)")
    common.add_argument("--eps-list", dest="eps_list", help="comma separated eps values")
    common.add_argument("--samples", type=int, help="Monte Carlo samples per eps")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--grid-n", dest="grid_n", type=int, help="variational grid intervals")
    common.add_argument("--multistarts", type=int)
    common.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dump-paths", dest="dump_paths", type=int, help="tilted paths to dump per eps")
    common.add_argument("--h", dest="h", type=float, help="localization radius")
    common.add_argument("--localize", dest="localize", type=_bool, help="drop paths leaving the tube")
    common.add_argument("--k0-samples", dest="k0_samples", type=int)
    common.add_argument("--dt", type=float, help="simulation mesh step")
    ap = argparse.ArgumentParser(prog="ldexpand", description="Precise large-deviation asymptotics for jump-diffusions")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("variational", parents=[common], help="solve the extremal problem")
    sub.add_parser("sweep", parents=[common], help="eps sweep, prefactor fit and diagnostics")
    pp = sub.add_parser("pide", parents=[common], help="finite differences vs Feynman-Kac Monte Carlo")
    pp.add_argument("--preset", help="model preset for the equation (default pide-special)")
    pp.add_argument("--eps", type=float)
    pp.add_argument("--g", help="initial datum: gaussian, one or an expression in x")
    pp.add_argument("--c", type=float, help="constant reaction coefficient")
    pp.add_argument("--t-end", dest="t_end", type=float)
    pp.add_argument("--x-min", dest="x_min", type=float)
    pp.add_argument("--x-max", dest="x_max", type=float)
    pp.add_argument("--nx", type=int)
    pp.add_argument("--nt", type=int)
    pp.add_argument("--n-mc", dest="n_mc", type=int)
    sub.add_parser("report", parents=[common], help="merge outputs and flag failed invariants")
    return ap


COMMANDS = {"variational": (cmd_variational, VariationalError, EXIT_VARIATIONAL),
            "sweep": (cmd_sweep, EstimatorError, EXIT_ESTIMATOR),
            "pide": (cmd_pide, PideError, EXIT_PIDE),
            "report": (cmd_report, MissingArtifacts, EXIT_REPORT)}


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    fn, err, code = COMMANDS[args.command]
    try:
        return fn(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VariationalError as exc:
        print(f"variational solver failed: {exc}", file=sys.stderr)
        return EXIT_VARIATIONAL
    except err as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    except (StabilityViolation, BoundaryLeak) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIDE


if __name__ == "__main__":
    sys.exit(main())
