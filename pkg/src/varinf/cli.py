"""Command line front end: ``varinf {solve,verify,sweep,report} --config FILE``.

Config grammar (INI style, ``#`` or ``;`` comments, unknown keys rejected)::

    [domain]
    omega = 0 1 0 1              # ax bx ay by
    d = 0.25 0.75 0.25 0.75      # or: none
    resolution = 65 65           # nodes per axis (one number for both)

    [exponent]
    p = const 4                  # const v | affine a b c | table path.csv

    [boundary]
    g = affine -0.5 1 0          # const v | affine a b c | flux ax ay | table path.csv
    compat_tol = 1e-10           # relative to the perimeter

    [schedule]
    k = 8 16 32 64 128 256 512 1024   # omit for k_j = p_+ 2^j, j = 1..j_max
    j_max = 12
    stop_tol = 1e-6              # default 1e-5 (max u - min u) of the first solve
    stop_early = true            # default: true for the geometric schedule only

    [solver]
    method = newton              # or gradient
    grad_tol = 1e-10
    max_iters = 500
    ls_shrink = 0.5
    ls_c1 = 1e-4

    [verify]
    tol_s, tol_midrange, tol_pxlap, tol_flux, tol_iface   # default 5h (midrange 10h)
    iface_fraction = 0.95
    delta_sing, m, trials, seed, tol_min

    [output]
    dir = out
    per_k = true

    [sweep]
    field = poly c0 cx cy cxx cxy cyy cxxx cxxy cxyy cyyy   # verify-only sweep
    memory_cap_mb = 2048

With ``[sweep] field`` set, ``g = exact`` means the exact flux of that field.
Relative table paths are resolved against the config file's directory.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .domain import DomainSpec, Grid, RegionLabel, build_grid
from .errors import (DomainError, ExponentError, NoConvergence, LineSearchStall, ParseError,
                     ShapeMismatch, ValidationError, VarinfError)
from .exponent import ExponentField, validate
from .functional import boundary_trace, compatibility, compatibility_ok, parse_g_spec, power
from .solver import (ContinuationSchedule, SolverConfig, extract_limit, project_mean_zero,
                     run_continuation)
from . import verify as V

log = logging.getLogger("varinf")

BYTES_PER_NODE = 4096   # rough peak footprint of one Newton solve, per grid node


# -- value parsers ------------------------------------------------------------

def _floats(n=None):
    def parse(text):
        vals = [float(t) for t in text.replace(",", " ").split()]
        if n is not None and len(vals) != n:
            raise ValueError(f"expected {n} numbers, got {len(vals)}")
        return tuple(vals)
    return parse


def _resolution(text):
    vals = [int(t) for t in text.replace(",", " ").split()]
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2:
        raise ValueError("expected one or two integers")
    return tuple(vals)


def _d_rect(text):
    return None if text.strip().lower() == "none" else _floats(4)(text)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() == "none" else float(text)


SCHEMA = {
    "domain": {"omega": _floats(4), "d": _d_rect, "resolution": _resolution},
    "exponent": {"p": str},
    "boundary": {"g": str, "compat_tol": float},
    "schedule": {"k": _floats(), "j_max": int, "stop_tol": _opt_float, "stop_early": _bool},
    "solver": {"method": str, "grad_tol": float, "max_iters": int, "ls_shrink": float,
               "ls_c1": float, "max_backtracks": int},
    "verify": {"tol_s": float, "tol_midrange": float, "tol_pxlap": float, "tol_flux": float,
               "tol_iface": float, "iface_fraction": float, "delta_sing": float, "m": float,
               "trials": int, "seed": int, "tol_min": float},
    "output": {"dir": str, "per_k": _bool},
    "sweep": {"field": str, "memory_cap_mb": float},
}
REQUIRED = [("domain", "resolution"), ("exponent", "p"), ("boundary", "g")]


# -- configuration --------------------------------------------------------------

@dataclass
class RunConfig:
    domain: DomainSpec
    p_text: str
    g_text: str
    compat_tol: float = 1e-10
    k_values: tuple | None = None
    j_max: int = 12
    stop_tol: float | None = None
    stop_early: bool | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    verify: dict = field(default_factory=dict)
    out_dir: str = "out"
    per_k: bool = True
    sweep_field: str | None = None
    memory_cap_mb: float = 2048.0
    source: str = ""
    base_dir: str = "."

    def problem(self, resolution=None):
        """Build and validate (grid, p, g) at the configured or a given resolution."""
        spec = self.domain if resolution is None else \
            DomainSpec(self.domain.omega_rect, self.domain.d_rect, resolution)
        try:
            grid = build_grid(spec)
            p = validate(self.p_text, grid, base_dir=self.base_dir)
        except (DomainError, ExponentError) as exc:
            raise ValidationError(type(exc).__name__, str(exc)) from exc
        if self.g_text.strip().lower() == "exact":
            g = exact_flux(grid, p, parse_field(self.sweep_field))
        else:
            g = boundary_trace(grid, self.g_text, p, base_dir=self.base_dir)
            tol = self.compat_tol * grid.perimeter
            if not compatibility_ok(grid, g, tol):
                raise ValidationError("compatibility", f"boundary integral of g is "
                                      f"{compatibility(grid, g):.6g}, tolerance {tol:.3g}")
        return grid, p, g

    def schedule(self, p: ExponentField) -> ContinuationSchedule:
        if self.k_values is None:
            early = True if self.stop_early is None else self.stop_early
            return ContinuationSchedule.geometric(p.p_plus, self.j_max, self.stop_tol, early)
        return ContinuationSchedule(self.k_values, self.stop_tol, bool(self.stop_early))

    def echo(self) -> dict:
        out = asdict(self)
        out["domain"] = asdict(self.domain)
        out.pop("source")
        out.pop("base_dir")
        return out


def _locate(lines):
    """Map (section, key) to (line, column) of the key, both 1-based."""
    where, section = {}, None
    for no, raw in enumerate(lines, 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = s.split("=", 1)[0].split(":", 1)[0].strip().lower()
            eq = raw.index("=") if "=" in raw else raw.index(":")
            rest = raw[eq + 1:]
            value_col = eq + 2 + len(rest) - len(rest.lstrip())
            where[(section, key)] = (no, raw.index(raw.lstrip()[0]) + 1, value_col)
    return where


def parse_config(path) -> RunConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), base_dir=path.parent)


def parse_config_text(text: str, base_dir=".") -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       interpolation=None, strict=True)
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("key outside any [section]", exc.lineno, 1) from None
    except configparser.DuplicateOptionError as exc:
        raise ParseError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, 1) from None
    except configparser.DuplicateSectionError as exc:
        raise ParseError(f"duplicate section [{exc.section}]", exc.lineno, 1) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ParseError("malformed line", lineno, 1) from None

    where = _locate(text.splitlines())
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            line = next((no for no, raw in enumerate(text.splitlines(), 1)
                         if raw.strip() == f"[{section}]"), None)
            raise ParseError(f"unknown section [{section}]", line, 1)
        for key, raw in parser.items(section):
            line, kcol, vcol = where.get((section, key), (None, None, None))
            if key not in SCHEMA[section]:
                raise ParseError(f"unknown key {key!r} in [{section}]", line, kcol)
            try:
                values[(section, key)] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ParseError(f"bad value for {section}.{key}: {exc}", line, vcol) from None
    for section, key in REQUIRED:
        if (section, key) not in values:
            raise ParseError(f"missing required key {key!r} in [{section}]")

    get = lambda s, k, default=None: values.get((s, k), default)  # noqa: E731
    try:
        domain = DomainSpec(get("domain", "omega", (0.0, 1.0, 0.0, 1.0)),
                            get("domain", "d"), get("domain", "resolution"))
    except DomainError as exc:
        raise ValidationError(type(exc).__name__, str(exc)) from None
    solver_kw = {k: v for (s, k), v in values.items() if s == "solver"}
    try:
        solver = SolverConfig(**solver_kw)
    except ValueError as exc:
        raise ValidationError("SolverConfig", str(exc)) from None
    if get("schedule", "k") is not None:
        ks = get("schedule", "k")
        if len(ks) < 2 or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ValidationError("schedule", f"k values must be strictly increasing "
                                  f"and at least two, got {ks}")

    cfg = RunConfig(domain=domain, p_text=get("exponent", "p"), g_text=get("boundary", "g"),
                    compat_tol=get("boundary", "compat_tol", 1e-10),
                    k_values=get("schedule", "k"), j_max=get("schedule", "j_max", 12),
                    stop_tol=get("schedule", "stop_tol"),
                    stop_early=get("schedule", "stop_early"), solver=solver,
                    verify={k: v for (s, k), v in values.items() if s == "verify"},
                    out_dir=get("output", "dir", "out"), per_k=get("output", "per_k", True),
                    sweep_field=get("sweep", "field"),
                    memory_cap_mb=get("sweep", "memory_cap_mb", 2048.0),
                    source=text, base_dir=str(base_dir))
    if cfg.g_text.strip().lower() == "exact" and cfg.sweep_field is None:
        raise ValidationError("g_exact", "'g = exact' needs a [sweep] field")
    if cfg.g_text.strip().lower() != "exact":
        try:
            parse_g_spec(cfg.g_text)
        except ParseError as exc:
            line, _, vcol = where.get(("boundary", "g"), (None, None, None))
            raise ParseError(str(exc), line, vcol) from None
    if cfg.sweep_field is not None:
        parse_field(cfg.sweep_field)
    _, p_check, _ = cfg.problem()
    if cfg.k_values is not None and cfg.k_values[0] <= p_check.p_plus:
        raise ValidationError("schedule", f"first k = {cfg.k_values[0]:g} must exceed "
                              f"p_+ = {p_check.p_plus:g}")
    return cfg


# -- closed-form test fields ----------------------------------------------------

MONOMIALS = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)]


def parse_field(text: str) -> np.ndarray:
    """``poly c0 cx cy cxx cxy cyy cxxx cxxy cxyy cyyy`` (trailing terms optional)."""
    parts = text.split()
    if not parts or parts[0].lower() not in ("poly", "affine") or len(parts) - 1 > len(MONOMIALS):
        raise ParseError(f"unrecognised field spec {text!r}; expected 'poly c0 cx cy ...'")
    try:
        coef = np.array([float(t) for t in parts[1:]])
    except ValueError as exc:
        raise ParseError(f"bad number in field spec {text!r}: {exc}") from None
    return np.pad(coef, (0, len(MONOMIALS) - len(coef)))


def field_values(coef, x, y):
    return sum(c * x ** a * y ** b for c, (a, b) in zip(coef, MONOMIALS))


def field_gradient(coef, x, y):
    gx = sum(c * a * x ** max(a - 1, 0) * y ** b for c, (a, b) in zip(coef, MONOMIALS))
    gy = sum(c * b * x ** a * y ** max(b - 1, 0) for c, (a, b) in zip(coef, MONOMIALS))
    return np.column_stack([gx * np.ones_like(x), gy * np.ones_like(x)])


def exact_flux(grid: Grid, p: ExponentField, coef) -> np.ndarray:
    nodes = grid.bnd_nodes
    G = field_gradient(coef, *grid.nodes[nodes].T)
    return power(np.hypot(*G.T), p.values[nodes] - 2) * np.sum(G * grid.bnd_normals, axis=1)


# -- field files ----------------------------------------------------------------

def write_field(path, grid: Grid, u: np.ndarray):
    names = [RegionLabel(int(lab)).name for lab in grid.labels]
    with open(path, "w", newline="") as fh:
        fh.write("x,y,region,u\n")
        for (x, y), name, val in zip(grid.nodes, names, u):
            fh.write(f"{x:.17g},{y:.17g},{name},{val:.17g}\n")


def read_field(path, grid: Grid) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != grid.n_nodes:
        raise ShapeMismatch(f"{path}: {len(rows)} rows for a grid of {grid.n_nodes} nodes")
    try:
        xy = np.array([[float(r["x"]), float(r["y"])] for r in rows])
        u = np.array([float(r["u"]) for r in rows])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed field file ({exc})") from None
    if not np.allclose(xy, grid.nodes, rtol=0, atol=1e-12 * max(1.0, np.abs(grid.nodes).max())):
        raise ShapeMismatch(f"{path}: node coordinates do not match the grid")
    return u


# -- verification battery ---------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        obj = float(obj)
        return obj if math.isfinite(obj) else str(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def run_battery(grid, p, g, u, settings: dict, results=None, seed=None) -> dict:
    """Every certification check on ``u``; returns name -> summary dict with 'passed'."""
    h = grid.hmax
    checks = {}
    s = V.check_membership_S(grid, u, p, tol_S=settings.get("tol_s"))
    checks["S_membership"] = asdict(s)
    direct, mid = V.infinity_residual(grid, u, settings.get("tol_midrange"))
    checks["infinity_direct"] = direct.summary()
    checks["infinity_direct"]["informational"] = True
    checks["infinity_midrange"] = mid.summary()
    checks["pxlap"] = V.pxlap_residual(grid, u, p, settings.get("tol_pxlap"),
                                       settings.get("delta_sing")).summary()
    checks["flux"] = V.flux_residual(grid, u, p, g, settings.get("tol_flux")).summary()
    iface = V.interface_sign_condition(grid, u, settings.get("tol_iface")).summary()
    frac = settings.get("iface_fraction", 0.95)
    iface["required_fraction"] = frac
    iface["max_within_tol"] = iface["passed"]
    iface["passed"] = iface["pass_fraction"] >= frac
    checks["interface"] = iface

    if results is not None:
        m = settings.get("m", 2 * p.p_minus)
        b = V.uniform_bounds_monitor(grid, results, p, m)
        checks["uniform_bounds"] = asdict(b)

    seed = settings.get("seed", 0) if seed is None else seed
    if s.passed:
        mr = V.minimality_spot_check(grid, u, p, g, settings.get("trials", 100), seed,
                                     settings.get("tol_min"), raise_on_violation=False)
        checks["minimality"] = asdict(mr)
    else:
        checks["minimality"] = {"passed": False, "skipped": "field is not in S"}
    checks["minimality"]["seed"] = seed
    for name, c in checks.items():
        c.setdefault("h", h)
    return checks


def _certified(checks: dict) -> bool:
    return all(c["passed"] for c in checks.values() if not c.get("informational"))


# -- run report -------------------------------------------------------------------

@dataclass
class RunReport:
    command: str
    version: str
    config: dict
    config_text: str
    per_k: list = field(default_factory=list)
    limit: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    passed: bool = False
    timings: dict = field(default_factory=dict)

    def to_json(self) -> str:
        body = asdict(self)
        body.pop("timings")   # wall-clock numbers live in timings.json
        return json.dumps(_clean(body), indent=2, sort_keys=True) + "\n"


def _write_report(out: Path, report: RunReport):
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "timings.json").write_text(json.dumps(_clean(report.timings), indent=2) + "\n")


def _write_failure(out: Path, command: str, exc: Exception):
    out.mkdir(parents=True, exist_ok=True)
    body = {"command": command, "version": __version__, "error": type(exc).__name__,
            "message": str(exc), "k": getattr(exc, "k", None)}
    (out / "failure.json").write_text(json.dumps(_clean(body), indent=2) + "\n")


def _base_report(cfg: RunConfig, command: str) -> RunReport:
    return RunReport(command=command, version=__version__, config=cfg.echo(),
                     config_text=cfg.source)


# -- commands ---------------------------------------------------------------------

def solve_pipeline(cfg: RunConfig, seed=None, resolution=None):
    """Continuation, limit extraction and the full battery. Returns (report, grid, results)."""
    report = _base_report(cfg, "solve")
    t0 = time.perf_counter()
    grid, p, g = cfg.problem(resolution)
    if cfg.g_text.strip().lower() == "exact":
        raise ValidationError("g_exact", "'g = exact' is for verify-only sweeps")
    results = run_continuation(grid, p, g, cfg.schedule(p), cfg.solver)
    t1 = time.perf_counter()
    if len(results) >= 2:
        lim = extract_limit(results, cfg.stop_tol)
    else:
        lim = None
    u_inf = results[-1].u
    report.per_k = [{"k": r.k, "iterations": r.iterations, "energy": r.energy_trace[-1],
                     "grad_norm_final": r.grad_norm_final, "modular_bulk": r.modular_bulk}
                    for r in results]
    if lim is not None:
        report.limit = {"k_final": lim.k_final, "deltas": lim.deltas, "stop_tol": lim.stop_tol,
                        "cauchy_ok": lim.cauchy_ok, "u_min": float(u_inf.min()),
                        "u_max": float(u_inf.max())}
    else:
        report.limit = {"k_final": results[-1].k, "deltas": [], "cauchy_ok": False,
                        "note": "a single solve gives no Cauchy certificate"}
    report.checks = run_battery(grid, p, g, u_inf, cfg.verify, results, seed)
    report.checks["cauchy"] = {"passed": bool(report.limit["cauchy_ok"])}
    report.passed = _certified(report.checks)
    report.timings = {"solve_s": t1 - t0, "verify_s": time.perf_counter() - t1}
    return report, grid, results


def cmd_solve(cfg: RunConfig, out: Path, seed=None) -> int:
    try:
        report, grid, results = solve_pipeline(cfg, seed)
    except (NoConvergence, LineSearchStall) as exc:
        log.error("solve failed at k = %s: %s", exc.k, exc)
        _write_failure(out, "solve", exc)
        return 1
    out.mkdir(parents=True, exist_ok=True)
    if cfg.per_k:
        for r in results:
            write_field(out / f"u_k{r.k:g}.csv", grid, r.u)
    write_field(out / "u_inf.csv", grid, results[-1].u)
    _write_report(out, report)
    _print_summary(report)
    return 0 if report.passed else 2


def cmd_verify(cfg: RunConfig, field_path: Path, out: Path, seed=None) -> int:
    report = _base_report(cfg, "verify")
    t0 = time.perf_counter()
    grid, p, g = cfg.problem()
    u = read_field(field_path, grid)
    report.checks = run_battery(grid, p, g, u, cfg.verify, None, seed)
    report.passed = _certified(report.checks)
    report.limit = {"field": str(field_path)}
    report.timings = {"verify_s": time.perf_counter() - t0}
    _write_report(out, report)
    _print_summary(report)
    return 0 if report.passed else 2


def _level_resolution(cfg: RunConfig, level: int):
    return tuple((n - 1) * 2 ** level + 1 for n in cfg.domain.resolution)


def _sweep_level(cfg: RunConfig, level: int, seed=None) -> dict:
    res = _level_resolution(cfg, level)
    if cfg.sweep_field is not None:
        grid, p, g = cfg.problem(res)
        coef = parse_field(cfg.sweep_field)
        u = project_mean_zero(grid, grid.field(lambda x, y: field_values(coef, x, y)))
        checks = run_battery(grid, p, g, u, cfg.verify, None, seed)
        delta = None
    else:
        report, grid, _ = solve_pipeline(cfg, seed, res)
        checks = report.checks
        delta = report.limit["deltas"][-1] if report.limit["deltas"] else None
    return {"level": level, "resolution": list(res), "h": grid.hmax,
            "midrange_max": checks["infinity_midrange"]["max"],
            "direct_inf_max": checks["infinity_direct"]["max"],
            "pxlap_max": checks["pxlap"]["max"], "flux_max": checks["flux"]["max"],
            "flux_corner_max": checks["flux"]["corner_max"],
            "flux_edge_max": checks["flux"]["edge_max"],
            "interface_max": checks["interface"]["max"],
            "interface_pass_fraction": checks["interface"]["pass_fraction"],
            "grad_sup_D": checks["S_membership"]["grad_sup_D"], "final_delta": delta,
            "passed": _certified(checks)}


def observed_order(h, values) -> float | None:
    """Least-squares slope of log(value) against log(h); None if any value is 0."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2 or np.any(v <= 0) or not np.all(np.isfinite(v)):
        return None
    return float(np.polyfit(np.log(h), np.log(v), 1)[0])


def _workers(n_jobs: int) -> int:
    env = os.environ.get("VARINF_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ValidationError("VARINF_THREADS", f"not an integer: {env!r}") from None
        if cap < 1:
            raise ValidationError("VARINF_THREADS", "must be at least 1")
    return max(1, min(cap, n_jobs))


def plan_levels(cfg: RunConfig, levels: int) -> list[int]:
    """Refinement levels that fit under the memory cap (the first one always runs)."""
    if levels < 2:
        raise ValidationError("levels", "a sweep needs at least 2 levels")
    keep = []
    for lev in range(levels):
        nx, ny = _level_resolution(cfg, lev)
        mb = nx * ny * BYTES_PER_NODE / 2 ** 20
        if lev > 0 and mb > cfg.memory_cap_mb:
            warnings.warn(f"sweep capped at {lev} levels: level {lev} ({nx}x{ny}) needs "
                          f"~{mb:.0f} MB > memory_cap_mb = {cfg.memory_cap_mb:g}")
            break
        keep.append(lev)
    return keep


def sweep_table(cfg: RunConfig, levels: int, seed=None) -> dict:
    todo = plan_levels(cfg, levels)
    workers = _workers(len(todo))
    if workers == 1:
        rows = [_sweep_level(cfg, lev, seed) for lev in todo]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_level, [cfg] * len(todo), todo, [seed] * len(todo)))
    h = [r["h"] for r in rows]
    orders = {key: observed_order(h, [r[key] for r in rows])
              for key in ("midrange_max", "pxlap_max", "flux_max", "flux_edge_max",
                          "interface_max")}
    return {"version": __version__, "levels_requested": levels, "rows": rows,
            "orders": orders}


def cmd_sweep(cfg: RunConfig, levels: int, out: Path, seed=None) -> int:
    try:
        table = sweep_table(cfg, levels, seed)
    except (NoConvergence, LineSearchStall) as exc:
        _write_failure(out, "sweep", exc)
        log.error("sweep failed: %s", exc)
        return 1
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(_clean(table), indent=2, sort_keys=True) + "\n")
    cols = ["level", "resolution", "h", "midrange_max", "pxlap_max", "flux_max",
            "interface_pass_fraction", "final_delta"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in table["rows"]:
            w.writerow(["x".join(map(str, r[c])) if c == "resolution" else r[c] for c in cols])
    for r in table["rows"]:
        print(f"level {r['level']}  h = {r['h']:.4g}  midrange {r['midrange_max']:.3e}  "
              f"pxlap {r['pxlap_max']:.3e}  flux {r['flux_max']:.3e}  "
              f"iface {r['interface_pass_fraction']:.3f}")
    print("observed orders:", {k: (None if v is None else round(v, 3))
                               for k, v in table["orders"].items()})
    return 0


def _print_summary(report: RunReport):
    for name, c in report.checks.items():
        tag = "info" if c.get("informational") else ("PASS" if c["passed"] else "FAIL")
        detail = ""
        if "max" in c:
            detail = f"max {c['max']:.3e} tol {c['tolerance']:.3e}"
        print(f"{tag:4s}  {name:18s} {detail}")
    print("certified" if report.passed else "not certified")


def cmd_report(out: Path) -> int:
    path = out / "report.json"
    if not path.exists():
        raise FileNotFoundError(f"no report.json in {out}")
    body = json.loads(path.read_text())
    print(f"{body['command']} report, varinf {body['version']}")
    for row in body.get("per_k", []):
        print(f"  k = {row['k']:<8g} iterations {row['iterations']:4d}  "
              f"I_k = {row['energy']:.12g}  modular {row['modular_bulk']:.6g}")
    lim = body.get("limit", {})
    if "deltas" in lim:
        print("  deltas:", " ".join(f"{d:.3e}" for d in lim["deltas"]),
              f" cauchy_ok = {lim.get('cauchy_ok')}")
    for name, c in body.get("checks", {}).items():
        tag = "info" if c.get("informational") else ("PASS" if c["passed"] else "FAIL")
        print(f"  {tag:4s} {name}")
    print("certified" if body.get("passed") else "not certified")
    return 0


# -- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="varinf", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=["solve", "verify", "sweep", "report"])
    ap.add_argument("--config", required=True, type=Path, help="run configuration file")
    ap.add_argument("--out", type=Path, help="output directory (default: [output] dir)")
    ap.add_argument("--seed", type=int, help="seed for the minimality audit")
    ap.add_argument("--levels", type=int, default=3, help="refinement levels for sweep")
    ap.add_argument("--field", type=Path, help="field CSV for verify (default OUT/u_inf.csv)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    try:
        cfg = parse_config(args.config)
        out = out or Path(cfg.base_dir) / cfg.out_dir
        if args.command == "solve":
            return cmd_solve(cfg, out, args.seed)
        if args.command == "verify":
            return cmd_verify(cfg, args.field or out / "u_inf.csv", out, args.seed)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.levels, out, args.seed)
        return cmd_report(out)
    except (VarinfError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if out is not None and args.command in ("solve", "sweep"):
            _write_failure(Path(out), args.command, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
