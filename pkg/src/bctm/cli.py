"""Command-line front end.

Subcommands ``fit``, ``simulate``, ``summary``, ``curves``, ``npmle`` and
``init`` read a delimited dataset and/or a JSON config and write JSON
reports with sorted keys.  Floats are written with ``repr`` so a report
read back reproduces every value bit for bit; infinite limits are written
as the string ``"Inf"``.  Wall-clock timings go to a ``<out>.timing.json``
sidecar so that reports themselves are byte-identical across reruns.

Exit codes: 0 success, 2 input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .em import EmConfig, FitResult, fit_em, profile_fit
from .exceptions import BctmError, DomainError
from .likelihood import Dataset
from .model import BctmParameters, CovariateProfile, KnotGrid, cure_rate, parameter_names, population_survival
from .npmle import npmle_initialize, turnbull_npmle
from .simulation import (
    SimScenario,
    initial_coeffs_perturbed,
    initial_psi,
    monte_carlo_study,
    select_cutpoints_quantile,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
INF_TOKENS = {"", "na", "inf", "+inf", "infinity"}
KNOT_MODES = ("quantile", "inflection", "explicit")
INIT_MODES = ("simulation-rule", "npmle-pipeline", "explicit")
EM_KEYS = ("tol", "max_em_iters", "optimizer", "optimizer_tol", "optimizer_max_evals")


class InputError(BctmError):
    """Malformed input file, config or command-line value."""


# -- serialization --------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "Inf" if x > 0 else "-Inf"
        return x
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _from_json_float(v):
    if v is None:
        return float("nan")
    if isinstance(v, str):
        return {"inf": math.inf, "-inf": -math.inf}[v.lower()]
    return float(v)


def write_report(obj, out: str | None, elapsed: float | None = None) -> None:
    text = dumps(obj)
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    if elapsed is not None:
        Path(str(path) + ".timing.json").write_text(dumps({"wall_clock_seconds": elapsed}), encoding="utf-8")


def read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise InputError(f"{path}: top level must be a JSON object")
    return obj


# -- dataset ingestion ------------------------------------------------------------


@dataclass
class Table:
    header: list[str]
    rows: list[list[str]]
    lines: list[int]

    def column(self, name: str) -> list[str]:
        try:
            j = self.header.index(name)
        except ValueError:
            raise InputError(f"column {name!r} not found; header is {self.header}") from None
        return [r[j] for r in self.rows]


def read_table(path: str) -> Table:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    first = text.split("\n", 1)[0]
    delim = "\t" if "\t" in first else ","
    reader = csv.reader(text.splitlines(), delimiter=delim)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InputError(f"{path}: empty file") from None
    rows, lines, bad = [], [], []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            bad.append(f"line {line}: expected {len(header)} fields, got {len(row)}")
            continue
        rows.append([c.strip() for c in row])
        lines.append(line)
    if bad:
        raise InputError(f"{path}: malformed rows\n  " + "\n  ".join(bad))
    return Table(header, rows, lines)


def _parse_limit(tok: str, allow_inf: bool) -> float:
    if tok.lower() in INF_TOKENS:
        if allow_inf:
            return math.inf
        raise ValueError(f"missing value {tok!r}")
    v = float(tok)
    if math.isnan(v):
        raise ValueError("NaN")
    return v


@dataclass
class ParsedData:
    data: Dataset
    table: Table
    kept: list[int]
    rejects: list[tuple[int, str]]
    z_cols: list[str]
    x_cols: list[str]
    center: np.ndarray | None = None
    scale: np.ndarray | None = None


def _covariate_columns(table: Table, columns: dict):
    used = {columns["left"], columns["right"], columns["event"]}
    rest = [h for h in table.header if h not in used]
    z_cols = columns.get("z", rest)
    x_cols = columns.get("x", rest)
    return list(z_cols), list(x_cols)


def parse_dataset(table: Table, columns: dict, on_bad_rows: str = "error", standardize: bool = False) -> ParsedData:
    """Validate rows and build a :class:`Dataset`.

    Rows failing validation are listed with their line numbers; with
    ``on_bad_rows = "skip"`` they are dropped and reported as rejects.
    """
    for key in ("left", "right", "event"):
        if key not in columns:
            raise InputError(f"columns mapping needs a {key!r} entry")
    z_cols, x_cols = _covariate_columns(table, columns)
    cov_cols = list(dict.fromkeys(z_cols + x_cols))
    idx = {name: table.header.index(name) for name in [columns["left"], columns["right"], columns["event"], *cov_cols] if name in table.header}
    missing = [c for c in [columns["left"], columns["right"], columns["event"], *cov_cols] if c not in idx]
    if missing:
        raise InputError(f"columns not found: {missing}; header is {table.header}")
    left, right, delta, cov, kept, rejects = [], [], [], [], [], []
    for k, (row, line) in enumerate(zip(table.rows, table.lines)):
        try:
            lo = _parse_limit(row[idx[columns["left"]]], allow_inf=False)
            hi = _parse_limit(row[idx[columns["right"]]], allow_inf=True)
            ev_tok = row[idx[columns["event"]]]
            if ev_tok not in ("0", "1", "0.0", "1.0"):
                raise ValueError(f"event indicator must be 0 or 1, got {ev_tok!r}")
            ev = int(float(ev_tok))
            if lo < 0 or not lo < hi:
                raise ValueError(f"need 0 <= left < right, got ({lo}, {hi})")
            if (ev == 1) != math.isfinite(hi):
                raise ValueError(f"event={ev} inconsistent with right limit {row[idx[columns['right']]]!r}")
            vals = [_parse_limit(row[idx[c]], allow_inf=False) for c in cov_cols]
            if not all(math.isfinite(v) for v in vals):
                raise ValueError("covariates must be finite")
        except ValueError as exc:
            rejects.append((line, str(exc)))
            continue
        left.append(lo)
        right.append(hi)
        delta.append(ev)
        cov.append(vals)
        kept.append(k)
    if rejects and on_bad_rows != "skip":
        raise InputError("invalid rows\n  " + "\n  ".join(f"line {ln}: {msg}" for ln, msg in rejects))
    if not kept:
        raise InputError("no valid data rows")
    cov = np.array(cov, dtype=float).reshape(len(kept), len(cov_cols))
    center = scale = None
    if standardize:
        center = cov.mean(axis=0)
        scale = cov.std(axis=0, ddof=1) if len(kept) > 1 else np.ones(len(cov_cols))
        scale = np.where(scale > 0, scale, 1.0)
        cov = (cov - center) / scale
    pos = {c: j for j, c in enumerate(cov_cols)}
    Z = np.column_stack([np.ones(len(kept))] + [cov[:, pos[c]] for c in z_cols])
    X = np.column_stack([cov[:, pos[c]] for c in x_cols]) if x_cols else np.zeros((len(kept), 0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        data = Dataset(np.array(left), np.array(right), np.array(delta), Z, X)
    return ParsedData(data, table, kept, rejects, z_cols, x_cols, center, scale)


def load_dataset(path: str, cfg: dict) -> ParsedData:
    columns = cfg.get("columns")
    if not isinstance(columns, dict):
        raise InputError("config needs a 'columns' mapping with left, right and event")
    return parse_dataset(read_table(path), columns, cfg.get("on_bad_rows", "error"), bool(cfg.get("standardize", False)))


# -- configuration ------------------------------------------------------------------


def em_config(cfg: dict) -> EmConfig:
    kwargs = {k: cfg[k] for k in EM_KEYS if k in cfg}
    try:
        return EmConfig(**kwargs)
    except (TypeError, DomainError) as exc:
        raise InputError(f"invalid EM settings: {exc}") from exc


def _knot_spec(cfg: dict, B_override):
    has_cut = "cutpoints" in cfg
    mode = cfg.get("knot_mode", "explicit" if has_cut else "quantile")
    if mode not in KNOT_MODES:
        raise InputError(f"knot_mode must be one of {KNOT_MODES}")
    if (mode == "explicit") != has_cut:
        raise InputError("give exactly one knot specification: 'cutpoints' with knot_mode explicit, or B with quantile/inflection")
    if has_cut:
        if B_override is not None or "B" in cfg:
            raise InputError("B conflicts with explicit cutpoints; give only one knot specification")
        try:
            knots = KnotGrid(np.array(cfg["cutpoints"], dtype=float))
        except (DomainError, ValueError, TypeError) as exc:
            raise InputError(f"invalid cutpoints: {exc}") from exc
        return mode, knots.B, knots
    B = B_override if B_override is not None else cfg.get("B")
    if not isinstance(B, int) or B < 1:
        raise InputError("B must be a positive integer (config key 'B' or --B)")
    return mode, B, None


def _theta0(cfg: dict, B: int, q1: int, q2: int) -> np.ndarray:
    names = parameter_names(B, q1, q2)
    raw = cfg.get("theta0")
    if isinstance(raw, dict):
        missing = [n for n in names if n not in raw]
        if missing:
            raise InputError(f"theta0 is missing {missing}")
        return np.array([float(raw[n]) for n in names])
    if isinstance(raw, list) and len(raw) == len(names):
        return np.array(raw, dtype=float)
    raise InputError(f"explicit init needs theta0 as a list of {len(names)} values or a mapping over {names}")


def _named_group(parsed: ParsedData, cfg: dict):
    group = cfg.get("group")
    if group is None:
        return None
    if group not in parsed.z_cols:
        raise InputError(f"group column {group!r} is not an incidence covariate")
    return 1 + parsed.z_cols.index(group)


def prepare_fit(parsed: ParsedData, cfg: dict, B_override=None, seed=None):
    """Knots and initial parameters from the config; returns ``(knots, init, info)``."""
    data = parsed.data
    mode, B, knots = _knot_spec(cfg, B_override)
    init_mode = cfg.get("init_mode", "simulation-rule")
    if init_mode not in INIT_MODES:
        raise InputError(f"init_mode must be one of {INIT_MODES}")
    seed = cfg.get("seed", 0) if seed is None else seed
    q1, q2 = data.q1, data.q2
    info = {"knot_mode": mode, "init_mode": init_mode, "seed": seed}
    if init_mode == "npmle-pipeline":
        group = _named_group(parsed, cfg)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            bundle = npmle_initialize(
                data, B, group=group, knot_mode="quantile" if mode == "explicit" else mode, knots=knots
            )
        info["warnings"] = sorted({str(w.message) for w in caught})
        knots = bundle.knots
        init = bundle.parameters()
        return knots, init, info
    if knots is None:
        if mode == "inflection":
            raise InputError("inflection knots need init_mode npmle-pipeline (the hazard curve comes from it)")
        knots = select_cutpoints_quantile(data, B)
    if init_mode == "explicit":
        theta = _theta0(cfg, knots.B, q1, q2)
        try:
            init = BctmParameters.from_vector(theta, knots.B + 1, q1 + 1)
        except DomainError as exc:
            raise InputError(f"invalid theta0: {exc}") from exc
    else:
        centers = np.concatenate([cfg.get("beta_center", np.zeros(q1 + 1)), cfg.get("gamma_center", np.zeros(q2))])
        if centers.size != q1 + q2 + 1:
            raise InputError("beta_center/gamma_center lengths do not match the covariate mapping")
        coeffs = initial_coeffs_perturbed(centers, np.random.SeedSequence([int(seed), 0, 1]))
        init = BctmParameters(0.5, initial_psi(knots.B), coeffs[: q1 + 1], coeffs[q1 + 1 :])
    return knots, init, info


def _parse_sweep(text: str):
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", text)
    if not m or int(m.group(1)) < 1 or int(m.group(2)) < int(m.group(1)):
        raise InputError(f"--sweep-B expects a..b with 1 <= a <= b, got {text!r}")
    return list(range(int(m.group(1)), int(m.group(2)) + 1))


def _parse_grid(text: str):
    if text.strip().lower() == "default":
        return np.round(np.linspace(0, 1, 11), 10)
    try:
        grid = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise InputError(f"--profile-alpha-grid expects comma-separated numbers or 'default', got {text!r}") from None
    if grid.size == 0 or np.any((grid < 0) | (grid > 1)):
        raise InputError("alpha grid values must lie in [0, 1]")
    return grid


# -- report building ----------------------------------------------------------------


def fit_record(fit: FitResult, init: BctmParameters) -> dict:
    names = fit.names
    theta = fit.theta_hat.to_vector()
    return {
        "names": names,
        "theta_hat": dict(zip(names, theta)),
        "se": dict(zip(names, fit.se)),
        "vcov": fit.vcov,
        "boundary": dict(zip(names, fit.boundary)),
        "singular_information": fit.singular,
        "restricted_information": fit.restricted,
        "se_error": fit.se_error,
        "loglik": fit.loglik,
        "aic": fit.aic,
        "n_params": fit.n_params,
        "n_em_iters": fit.n_em_iters,
        "converged": fit.converged,
        "loglik_trace": fit.loglik_trace,
        "knots": fit.knots.tau,
        "init": dict(zip(names, init.to_vector())),
        "fixed_alpha": fit.fixed_alpha,
    }


def _data_record(path: str, parsed: ParsedData) -> dict:
    rec = {
        "path": Path(path).name,
        "n": len(parsed.data),
        "n_file_rows": len(parsed.table.rows),
        "rejects": [{"line": ln, "reason": msg} for ln, msg in parsed.rejects],
        "z_columns": parsed.z_cols,
        "x_columns": parsed.x_cols,
        "censoring_rate": parsed.data.censoring_rate,
    }
    if parsed.center is not None:
        cov = list(dict.fromkeys(parsed.z_cols + parsed.x_cols))
        rec["standardization"] = {"columns": cov, "center": parsed.center, "scale": parsed.scale}
    return rec


def _fit_one(parsed, cfg, B, seed, grid):
    knots, init, info = prepare_fit(parsed, cfg, B, seed)
    config = em_config(cfg)
    if grid is None:
        fit = fit_em(parsed.data, knots, init, config)
        rec = fit_record(fit, init)
    else:
        prof = profile_fit(parsed.data, knots, init, config, grid)
        rec = fit_record(prof.best, init)
        rec["profile"] = [{"alpha": a, "loglik": ll, "error": err} for a, ll, err in prof.table]
    rec["setup"] = info
    return rec


def cmd_fit(args) -> int:
    cfg = read_json(args.config)
    parsed = load_dataset(args.data, cfg)
    grid = None if args.profile_alpha_grid is None else _parse_grid(args.profile_alpha_grid)
    start = time.perf_counter()
    report = {"command": "fit", "version": __version__, "data": _data_record(args.data, parsed), "config": cfg}
    if args.sweep_B:
        if "cutpoints" in cfg:
            raise InputError("--sweep-B needs B-based knots, not explicit cutpoints")
        fits, table = {}, []
        for B in _parse_sweep(args.sweep_B):
            rec = _fit_one(parsed, cfg, B, args.seed, grid)
            fits[str(B)] = rec
            table.append({"B": B, "loglik": rec["loglik"], "n_params": rec["n_params"], "aic": rec["aic"]})
        report["sweep"] = table
        report["fits"] = fits
    else:
        report["fit"] = _fit_one(parsed, cfg, args.B, args.seed, grid)
    write_report(report, args.out, time.perf_counter() - start)
    return EXIT_OK


SCENARIO_KEYS = ("alpha_true", "n", "zeta", "zeta_star", "beta_true", "gamma_true", "seed", "B_fit", "reps", "generator")


def scenario_from_config(cfg: dict, seed=None, B=None, reps=None) -> SimScenario:
    unknown = set(cfg) - set(SCENARIO_KEYS) - set(EM_KEYS) - {"n_jobs"}
    if unknown:
        raise InputError(f"unknown scenario keys: {sorted(unknown)}")
    kw = {k: cfg[k] for k in SCENARIO_KEYS if k in cfg}
    for key, val in (("seed", seed), ("B_fit", B), ("reps", reps)):
        if val is not None:
            kw[key] = val
    for key in ("beta_true", "gamma_true"):
        if key in kw:
            kw[key] = tuple(float(v) for v in kw[key])
    try:
        return SimScenario(**kw)
    except (TypeError, DomainError) as exc:
        raise InputError(f"invalid scenario: {exc}") from exc


def mc_record(report) -> dict:
    return {
        "rows": [
            {"name": r.name, "true": r.true, "EST": r.est, "SE": r.se, "BIAS": r.bias, "RMSE": r.rmse, "CP": r.cp}
            for r in report.rows
        ],
        "mean_loglik": report.mean_loglik,
        "mean_aic": report.mean_aic,
        "n_reps": report.n_reps,
        "n_used": report.n_used,
        "n_failed": report.n_failed,
        "failures": [{"rep": i, "reason": msg} for i, msg in report.failures],
        "censoring_rate": report.censoring_rate,
    }


def cmd_simulate(args) -> int:
    cfg = read_json(args.scenario)
    scenario = scenario_from_config(cfg, args.seed, args.B, args.reps)
    config = em_config(cfg)
    jobs = args.jobs if args.jobs is not None else int(cfg.get("n_jobs", 1))
    start = time.perf_counter()
    try:
        report = monte_carlo_study(scenario, config, n_jobs=jobs)
    except BctmError as exc:
        exc.args = (f"scenario {Path(args.scenario).name}: {exc}",) + exc.args[1:]
        raise
    out = {
        "command": "simulate",
        "version": __version__,
        "scenario": {k: getattr(scenario, k) for k in SCENARIO_KEYS},
        "em": {k: getattr(config, k) for k in EM_KEYS},
        "report": mc_record(report),
    }
    write_report(out, args.out, time.perf_counter() - start)
    return EXIT_OK


def _sort_key(v: str):
    try:
        return (0, float(v), v)
    except ValueError:
        return (1, 0.0, v)


def _cell_summary(parsed: ParsedData, members: np.ndarray, cov_cols: list[str], raw_cov: np.ndarray) -> dict:
    data = parsed.data
    ev = members & (data.delta == 1)
    n = int(members.sum())
    mid = 0.5 * (data.left[ev] + data.right[ev])
    rec = {
        "n": n,
        "event_pct": 100.0 * float(np.mean(data.delta[members] == 1)) if n else None,
        "median_event_time": float(np.median(mid)) if mid.size else None,
    }
    stats = {}
    for j, c in enumerate(cov_cols):
        col = raw_cov[members, j]
        stats[c] = {
            "mean": float(np.mean(col)) if n else None,
            "sd": float(np.std(col, ddof=1)) if n > 1 else None,
        }
    rec["covariates"] = stats
    return rec


def cmd_summary(args) -> int:
    cfg = read_json(args.config) if args.config else {}
    columns = dict(cfg.get("columns", {}))
    for key, val in (("left", args.left), ("right", args.right), ("event", args.event)):
        if val is not None:
            columns[key] = val
    table = read_table(args.data)
    if "z" not in columns:
        skip = {columns.get("left"), columns.get("right"), columns.get("event"), args.group, args.strata}
        columns["z"] = [h for h in table.header if h not in skip]
        columns["x"] = []
    parsed = parse_dataset(table, columns, cfg.get("on_bad_rows", "error"))
    kept_rows = [table.rows[k] for k in parsed.kept]
    cov_cols = [c for c in dict.fromkeys(parsed.z_cols + parsed.x_cols) if c not in (args.group, args.strata)]
    raw_cov = np.array([[float(r[table.header.index(c)]) for c in cov_cols] for r in kept_rows]).reshape(len(kept_rows), len(cov_cols))

    def labels(name):
        if name is None:
            return None
        j = table.header.index(name) if name in table.header else None
        if j is None:
            raise InputError(f"column {name!r} not found; header is {table.header}")
        return np.array([r[j] for r in kept_rows])

    g = labels(args.group)
    s = labels(args.strata)
    groups = sorted(set(g), key=_sort_key)
    strata = sorted(set(s), key=_sort_key) if s is not None else []
    cells = {}
    for gv in groups + ["Total"]:
        gm = np.ones(len(kept_rows), dtype=bool) if gv == "Total" else g == gv
        row = {}
        for sv in strata:
            row[sv] = _cell_summary(parsed, gm & (s == sv), cov_cols, raw_cov)
        row["Total"] = _cell_summary(parsed, gm, cov_cols, raw_cov)
        cells[f"{args.group}={gv}" if gv != "Total" else "Total"] = row
    report = {
        "command": "summary",
        "version": __version__,
        "data": Path(args.data).name,
        "group": args.group,
        "strata": args.strata,
        "n": len(parsed.data),
        "rejects": [{"line": ln, "reason": msg} for ln, msg in parsed.rejects],
        "notes": {
            "median_event_time": "median of interval midpoints (l + r) / 2 over subjects with an event in the cell",
            "sd": "sample standard deviation (ddof = 1); null when the cell has fewer than two rows",
        },
        "cells": cells,
    }
    write_report(report, args.out)
    return EXIT_OK


def _profile_rows(prof: dict, fit_rep: dict):
    name = str(prof.get("name", "profile"))
    if "z" in prof:
        z = np.array(prof["z"], dtype=float)
        x = np.array(prof.get("x", []), dtype=float)
        return name, CovariateProfile(z, x)
    covs = prof.get("covariates")
    if not isinstance(covs, dict):
        raise InputError(f"profile {name!r} needs 'covariates' by column name or raw 'z'/'x' rows")
    data = fit_rep["data"]
    std = data.get("standardization")

    def value(col):
        if col not in covs:
            raise InputError(f"profile {name!r} is missing covariate {col!r}")
        v = float(covs[col])
        if std:
            j = std["columns"].index(col)
            v = (v - std["center"][j]) / std["scale"][j]
        return v

    z = np.array([1.0] + [value(c) for c in data["z_columns"]])
    x = np.array([value(c) for c in data["x_columns"]])
    return name, CovariateProfile(z, x)


def _fit_from_report(rep: dict):
    fit = rep.get("fit")
    if fit is None:
        raise InputError("curves needs a single-fit report (not a sweep)")
    names = fit["names"]
    theta = np.array([_from_json_float(fit["theta_hat"][n]) for n in names])
    n_psi = sum(n.startswith("psi_") for n in names)
    n_beta = sum(n.startswith("beta_") for n in names)
    return BctmParameters.from_vector(theta, n_psi, n_beta), KnotGrid(np.array(fit["knots"], dtype=float))


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "profile"


def cmd_curves(args) -> int:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    rep = read_json(args.report)
    params, knots = _fit_from_report(rep)
    profiles = read_json(args.profiles).get("profiles")
    if not isinstance(profiles, list) or not profiles:
        raise InputError("profiles file needs a nonempty 'profiles' list")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = np.linspace(0.0, knots.tau_max, args.points)
    summary = []
    plt.rcParams["svg.hashsalt"] = "bctm"
    fig, ax = plt.subplots(figsize=(6, 4))
    for prof in profiles:
        name, profile = _profile_rows(prof, rep)
        if profile.z.size != params.beta.size or profile.x.size != params.gamma.size:
            raise InputError(f"profile {name!r} dimensions do not match the fit")
        sp = population_survival(grid, profile, params, knots)
        pi = cure_rate(params, profile.z)
        path = out / f"curve_{_slug(name)}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "S_p"])
            for t, v in zip(grid, sp):
                w.writerow([repr(float(t)), repr(float(v))])
        summary.append({"name": name, "file": path.name, "cure_rate": pi, "S_p_at_tau_B": float(sp[-1])})
        ax.plot(grid, sp, label=name)
    ax.set_xlabel("time")
    ax.set_ylabel("estimated population survival")
    ax.set_ylim(0.0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "curves.svg", format="svg", metadata={"Date": None})
    plt.close(fig)
    write_report({"command": "curves", "version": __version__, "profiles": summary, "tau_B": knots.tau_max}, str(out / "curves.json"))
    return EXIT_OK


def npmle_record(est) -> dict:
    t, s = est.survival_points()
    return {
        "support": [{"lower": p, "upper": q, "mass": m} for (p, q), m in zip(est.support, est.mass)],
        "mass_at_infinity": est.mass_at_infinity,
        "survival": [{"t": a, "S": b} for a, b in zip(t, s)],
        "iterations": est.n_iter,
        "converged": est.converged,
        "convention": "intervals (l, r]; S(t) keeps the mass of a support interval (p, q] above t until t reaches q",
    }


def cmd_npmle(args) -> int:
    cfg = read_json(args.config) if args.config else {}
    columns = dict(cfg.get("columns", {}))
    for key, val in (("left", args.left), ("right", args.right), ("event", args.event)):
        if val is not None:
            columns[key] = val
    table = read_table(args.data)
    columns.setdefault("z", [])
    columns.setdefault("x", [])
    parsed = parse_dataset(table, columns, cfg.get("on_bad_rows", "error"))
    est = turnbull_npmle(parsed.data)
    report = {"command": "npmle", "version": __version__, "data": _data_record(args.data, parsed), "npmle": npmle_record(est)}
    write_report(report, args.out)
    return EXIT_OK


def cmd_init(args) -> int:
    cfg = read_json(args.config)
    parsed = load_dataset(args.data, cfg)
    knots, init, info = prepare_fit(parsed, cfg, args.B, args.seed)
    names = init.names()
    report = {
        "command": "init",
        "version": __version__,
        "data": _data_record(args.data, parsed),
        "knots": knots.tau,
        "init": dict(zip(names, init.to_vector())),
        "setup": info,
    }
    write_report(report, args.out)
    return EXIT_OK


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bctm", description="Box-Cox transformation cure models for interval-censored data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the model to a dataset")
    f.add_argument("data")
    f.add_argument("config")
    f.add_argument("--B", type=int)
    f.add_argument("--sweep-B", dest="sweep_B", metavar="A..B")
    f.add_argument("--seed", type=int)
    f.add_argument("--profile-alpha-grid", dest="profile_alpha_grid", metavar="GRID")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="run a Monte-Carlo study from a scenario file")
    s.add_argument("scenario")
    s.add_argument("--seed", type=int)
    s.add_argument("--B", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--jobs", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("summary", help="descriptive table by group")
    m.add_argument("data")
    m.add_argument("--group", required=True)
    m.add_argument("--strata")
    m.add_argument("--config")
    m.add_argument("--left")
    m.add_argument("--right")
    m.add_argument("--event")
    m.add_argument("--out")
    m.set_defaults(func=cmd_summary)

    c = sub.add_parser("curves", help="population survival curves from a fit report")
    c.add_argument("report")
    c.add_argument("profiles")
    c.add_argument("--points", type=int, default=201)
    c.add_argument("--out", required=True, help="output directory")
    c.set_defaults(func=cmd_curves)

    n = sub.add_parser("npmle", help="Turnbull nonparametric survival estimate")
    n.add_argument("data")
    n.add_argument("--config")
    n.add_argument("--left")
    n.add_argument("--right")
    n.add_argument("--event")
    n.add_argument("--out")
    n.set_defaults(func=cmd_npmle)

    i = sub.add_parser("init", help="starting values and knots only")
    i.add_argument("data")
    i.add_argument("config")
    i.add_argument("--B", type=int)
    i.add_argument("--seed", type=int)
    i.add_argument("--out")
    i.set_defaults(func=cmd_init)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (InputError, DomainError) as exc:
        print(f"bctm {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BctmError as exc:
        print(f"bctm {args.command}: numeric failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
