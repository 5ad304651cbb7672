"""Command-line experiment driver.

::

    stokeseg convergence --method meg --problem vortex2d --levels 8,16,32,64 --nu 1
    stokeseg sweep --rho 0.1:5:0.1 --rho-m 0.1:5:0.1 --h 1/16 --emit csv,svg
    stokeseg sweep --nu 1e-2,1e-3,1e-4,1e-5,1e-6 --h 1/32
    stokeseg export-vtk --method pr-meg --problem cube3d --h 1/8 --nu 1e-6
    stokeseg quality --problem lshape --h 1/8

Exit codes: 0 success, 2 configuration error, 3 numerical failure. Output
files are written atomically (temporary file + rename).

CSV files
---------
``convergence.csv``
    ``method,h,nu,rho,err_u_triple,rate_u,err_p_l2,rate_p,err_p_proj,cond2,assemble_s,solve_s``;
    ``rate_u`` and ``rate_p`` are pairwise log2 ratios of the listed errors.
``sweep.csv``
    ``method,h,nu,rho,err_u_triple,err_u_energy,err_u_weighted,err_p_l2,err_p_proj,cond2,assemble_s,solve_s``;
    for mEG rows of a penalty sweep ``rho`` holds the hypothetical weight
    ``rho_m``.

Floats are written with ``%.6e``; missing values are empty fields. Timing
columns are wall-clock and therefore differ between runs; ``--no-timings``
leaves them empty, which makes repeated runs byte-identical.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import analysis as an
from .assembly import InvalidPenalty, SingularLocalBDM
from .mesh import MeshError, ParseError, load_mesh, mesh_quality, perturb
from .solver import SolverError
from .weakcalc import build_stencil, weak_divergence

log = logging.getLogger("stokeseg")

METHODS = ("eg", "meg", "pr-meg")
PROBLEMS = ("vortex2d", "cube3d", "lshape")
EMITS = ("csv", "vtk", "svg")

CONVERGENCE_COLUMNS = ("method", "h", "nu", "rho", "err_u_triple", "rate_u", "err_p_l2",
                       "rate_p", "err_p_proj", "cond2", "assemble_s", "solve_s")
SWEEP_COLUMNS = ("method", "h", "nu", "rho", "err_u_triple", "err_u_energy", "err_u_weighted",
                 "err_p_l2", "err_p_proj", "cond2", "assemble_s", "solve_s")
TIMING_COLUMNS = ("assemble_s", "solve_s")


class ConfigError(ValueError):
    pass


# -- parsing helpers ------------------------------------------------------------
def parse_grid(text: str) -> list:
    """``"a,b,c"`` or ``"start:stop:step"`` (inclusive stop) to a list of floats."""
    text = text.strip()
    if not text:
        return []
    try:
        if ":" in text:
            parts = [float(t) for t in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0:
                raise ConfigError(f"range grid must be start:stop:step with step > 0, got {text!r}")
            start, stop, step = parts
            if stop < start:
                return []
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + k * step, 12) for k in range(count)]
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"cannot parse grid {text!r}") from exc


def parse_levels(text: str) -> list:
    try:
        levels = [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"levels must be integers, got {text!r}") from exc
    if any(n < 1 for n in levels):
        raise ConfigError("levels must be positive")
    return levels


def parse_h(text: str) -> int:
    """``"1/16"`` or ``"0.0625"`` to the number of subdivisions 16."""
    try:
        h = Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse mesh size {text!r}") from exc
    if h <= 0:
        raise ConfigError("mesh size must be positive")
    n = round(1 / h)
    if n < 1 or abs(float(1 / h) - n) > 1e-9 * n:
        raise ConfigError(f"mesh size {text} is not 1/n")
    return n


def parse_methods(text: str | None, default) -> list:
    if text is None:
        return list(default)
    methods = [t.strip() for t in text.split(",") if t.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown method(s) {bad}; choose from {', '.join(METHODS)}")
    return methods


def parse_emit(text: str | None, default) -> set:
    if text is None:
        return set(default)
    emit = {t.strip() for t in text.split(",") if t.strip()}
    bad = emit - set(EMITS)
    if bad:
        raise ConfigError(f"unknown output kind(s) {sorted(bad)}; choose from {', '.join(EMITS)}")
    return emit


def thread_count() -> int:
    raw = os.environ.get("STOKESEG_THREADS")
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"STOKESEG_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("STOKESEG_THREADS must be a positive integer")
    return n


# -- problems ---------------------------------------------------------------------
class Problem:
    """Exact solution plus a mesh factory ``n -> mesh``."""

    def __init__(self, problem: str, nu: float, perturbation: float = 0.0, seed: int = 0):
        if nu <= 0:
            raise ConfigError("viscosity must be positive")
        self.path = None
        if problem.startswith("file:"):
            self.path = Path(problem[5:])
            try:
                self.mesh = load_mesh(self.path)
            except OSError as exc:
                raise ConfigError(f"cannot read mesh file: {exc}") from exc
            except (ParseError, MeshError) as exc:
                raise ConfigError(f"invalid mesh file: {exc}") from exc
            name = "vortex2d" if self.mesh.dim == 2 else "cube3d"
        elif problem in PROBLEMS:
            name = problem
        else:
            raise ConfigError(f"unknown problem {problem!r}; choose from {', '.join(PROBLEMS)} or file:<path>")
        self.exact = an.SOLUTIONS[name](nu)
        self.perturbation = perturbation
        self.seed = seed

    @property
    def from_file(self) -> bool:
        return self.path is not None

    def mesh_at(self, n: int | None):
        if self.from_file:
            mesh = self.mesh
        else:
            mesh = an.MESHES[self.exact.name](n)
        if self.perturbation > 0:
            mesh = perturb(mesh, self.perturbation, seed=self.seed)
        return mesh

    def h_of(self, n: int | None, mesh) -> float:
        return mesh.h if n is None else 1.0 / n


# -- writers ----------------------------------------------------------------------
def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    value = float(value)
    if not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    return "%.6e" % value


def format_csv(rows, columns, timings: bool = True) -> str:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(
            "" if (not timings and c in TIMING_COLUMNS) else _fmt(row.get(c)) for c in columns
        ))
    return "\n".join(lines) + "\n"


def svg_line_plot(series, *, title: str = "", xlabel: str = "", ylabel: str = "",
                  logx: bool = True, logy: bool = True, width: int = 640, height: int = 440) -> str:
    """Minimal SVG line plot: one polyline per ``name -> (x, y)`` series."""
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    left, right, top, bottom = 80, 150, 40, 60
    pw, ph = width - left - right, height - top - bottom

    def tr(v, log_axis):
        v = np.asarray(v, dtype=float)
        return np.log10(v) if log_axis else v

    clean = {}
    for name, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logx:
            ok &= x > 0
        if logy:
            ok &= y > 0
        clean[name] = (tr(x[ok], logx), tr(y[ok], logy))
    xs = np.concatenate([v[0] for v in clean.values()] or [np.zeros(0)])
    ys = np.concatenate([v[1] for v in clean.values()] or [np.zeros(0)])
    if xs.size == 0:
        xs = ys = np.array([0.0, 1.0])
    x0, x1 = (np.floor(xs.min()), np.ceil(xs.max())) if logx else (xs.min(), xs.max())
    y0, y1 = (np.floor(ys.min()), np.ceil(ys.max())) if logy else (ys.min(), ys.max())
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']

    def ticks(lo, hi, log_axis):
        if log_axis:
            return [float(k) for k in range(int(lo), int(hi) + 1)]
        return list(np.linspace(lo, hi, 5))

    def label(v, log_axis):
        return f"1e{int(v)}" if log_axis else f"{v:.3g}"

    for t in ticks(x0, x1, logx):
        X = px(t)
        out.append(f'<line x1="{X:.1f}" y1="{top + ph}" x2="{X:.1f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.1f}" y="{top + ph + 18}" text-anchor="middle">{label(t, logx)}</text>')
    for t in ticks(y0, y1, logy):
        Y = py(t)
        out.append(f'<line x1="{left - 5}" y1="{Y:.1f}" x2="{left}" y2="{Y:.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.1f}" text-anchor="end">{label(t, logy)}</text>')
    for k, (name, (x, y)) in enumerate(clean.items()):
        color = palette[k % len(palette)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 14 + 18 * k
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}">{_escape(name)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 15}" text-anchor="middle">{_escape(xlabel)}</text>')
    out.append(f'<text x="20" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 20 {top + ph / 2})">{_escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{width / 2}" y="22" text-anchor="middle">{_escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


VTK_CELL_TYPES = {2: 5, 3: 10}  # triangle, tetrahedron


def format_vtk(mesh, uh, ph, weak_div, title: str = "stokeseg solution") -> str:
    """Legacy ASCII VTK 3.0 unstructured grid with the EG solution fields."""
    d = mesh.dim
    V, C = mesh.num_vertices, mesh.num_cells
    pts = np.zeros((V, 3))
    pts[:, :d] = mesh.vertices
    vel = np.zeros((V, 3))
    vel[:, :d] = uh.cont
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {V} double"]
    lines += ["%.16e %.16e %.16e" % tuple(p) for p in pts]
    lines.append(f"CELLS {C} {C * (d + 2)}")
    lines += [" ".join(map(str, (d + 1, *c))) for c in mesh.cells]
    lines.append(f"CELL_TYPES {C}")
    lines += [str(VTK_CELL_TYPES[d])] * C
    lines.append(f"POINT_DATA {V}")
    lines.append("VECTORS u_continuous double")
    lines += ["%.16e %.16e %.16e" % tuple(v) for v in vel]
    lines.append(f"CELL_DATA {C}")
    for name, values in (("enrichment_coeff", uh.enr), ("pressure", ph.values),
                         ("weak_div_u", weak_div)):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines += ["%.16e" % v for v in values]
    return "\n".join(lines) + "\n"


# -- commands ---------------------------------------------------------------------
def _check_penalty(method: str, rho):
    if method == "eg":
        if rho is None:
            raise ConfigError("EG needs a penalty parameter: pass --rho")
        if rho <= 0:
            raise ConfigError("the penalty parameter must be positive")
    elif rho is not None:
        raise ConfigError("mEG accepts no penalty parameter")


def _single(values, flag):
    if values is None:
        return None
    if len(values) != 1:
        raise ConfigError(f"{flag} takes a single value for this command")
    return values[0]


def cmd_convergence(args) -> int:
    method = args.method or "meg"
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if args.rho_m is not None:
        raise ConfigError("--rho-m is only meaningful in a penalty sweep")
    rho = _single(args.rho, "--rho")
    _check_penalty(method, rho)
    nu = _single(args.nu, "--nu") if args.nu is not None else 1.0
    problem = Problem(args.problem, nu, args.perturb, args.seed)
    if problem.from_file:
        raise ConfigError("a convergence study needs generated meshes, not a mesh file")
    if args.levels is not None:
        levels = parse_levels(args.levels)
    elif args.h is not None:
        levels = [parse_h(args.h)]
    else:
        levels = [8, 16, 32, 64] if problem.exact.dim == 2 else [4, 8, 16]
    if len(levels) < 2:
        raise ConfigError("a convergence study needs at least two mesh levels")
    emit = parse_emit(args.emit, ("csv",))

    records = []
    for n in levels:
        rec, _, _ = an.run_case(method, problem.mesh_at(n), problem.exact, h=1.0 / n, rho=rho,
                                cond=args.cond)
        records.append(rec)
    rate_u = an.rates([r.err_velocity_triple for r in records])
    rate_p = an.rates([r.err_pressure_L2 for r in records])
    rows = []
    for rec, ru, rp in zip(records, rate_u, rate_p):
        rows.append({"method": rec.method, "h": rec.h, "nu": rec.nu, "rho": rec.rho,
                     "err_u_triple": rec.err_velocity_triple, "rate_u": ru,
                     "err_p_l2": rec.err_pressure_L2, "rate_p": rp,
                     "err_p_proj": rec.err_pressure_proj, "cond2": rec.cond2,
                     "assemble_s": rec.assemble_s, "solve_s": rec.solve_s})
    out = Path(args.out)
    if "csv" in emit:
        atomic_write(out / "convergence.csv", format_csv(rows, CONVERGENCE_COLUMNS, not args.no_timings))
    if "svg" in emit:
        hs = [r["h"] for r in rows]
        svg = svg_line_plot({"velocity": (hs, [r["err_u_triple"] for r in rows]),
                             "pressure": (hs, [r["err_p_l2"] for r in rows])},
                            title=f"{method} on {problem.exact.name}", xlabel="h", ylabel="error")
        atomic_write(out / "convergence.svg", svg)
    if "vtk" in emit:
        raise ConfigError("use export-vtk for VTK output")
    for r in rows:
        print(f"{r['method']:6s} h={r['h']:.4e} |||e_u|||={r['err_u_triple']:.4e} "
              f"rate={_fmt(r['rate_u']) or '-':>12s} ||e_p||={r['err_p_l2']:.4e} "
              f"rate={_fmt(r['rate_p']) or '-':>12s}")
    return 0


def _sweep_row(rec) -> dict:
    return {"method": rec.method, "h": rec.h, "nu": rec.nu, "rho": rec.rho,
            "err_u_triple": rec.err_velocity_triple, "err_u_energy": rec.err_velocity_energy,
            "err_u_weighted": rec.err_velocity_weighted, "err_p_l2": rec.err_pressure_L2,
            "err_p_proj": rec.err_pressure_proj, "cond2": rec.cond2,
            "assemble_s": rec.assemble_s, "solve_s": rec.solve_s}


def cmd_sweep(args) -> int:
    rho = parse_grid(args.rho_text) if args.rho_text is not None else None
    rho_m = parse_grid(args.rho_m_text) if args.rho_m_text is not None else None
    nu = args.nu
    penalty_mode = rho is not None or rho_m is not None
    nu_mode = nu is not None and len(nu) > 1
    if penalty_mode and nu_mode:
        raise ConfigError("sweep over exactly one of the penalty or the viscosity")
    if not penalty_mode and nu is None:
        raise ConfigError("sweep needs a grid: --rho/--rho-m or --nu")
    for grid, flag in ((rho, "--rho"), (rho_m, "--rho-m"), (nu, "--nu")):
        if grid is not None:
            if not grid:
                raise ConfigError(f"empty {flag} grid")
            if any(v <= 0 for v in grid):
                raise ConfigError(f"{flag} values must be positive")
    if args.levels is not None:
        raise ConfigError("sweep runs on a single mesh: use --h")
    emit = parse_emit(args.emit, ("csv",))
    if "vtk" in emit:
        raise ConfigError("use export-vtk for VTK output")

    jobs = []
    if penalty_mode:
        default = (["eg"] if rho is not None else []) + (["meg"] if rho_m is not None else [])
        methods = parse_methods(args.method, default)
        for m in methods:
            if m == "eg" and rho is None:
                raise ConfigError("EG in a penalty sweep needs a --rho grid")
            if m != "eg" and rho_m is None:
                raise ConfigError("mEG accepts no penalty parameter; sweep the hypothetical weight with --rho-m")
        nu_value = nu[0] if nu else 1.0
        problem = Problem(args.problem, nu_value, args.perturb, args.seed)
        for m in methods:
            for r in (rho if m == "eg" else rho_m):
                jobs.append((m, problem.exact, {"rho": r} if m == "eg" else {"rho_m": r}))
        xlabel, xkey = "penalty", "rho"
    else:
        methods = parse_methods(args.method, ("meg", "pr-meg"))
        if "eg" in methods:
            raise ConfigError("a viscosity sweep compares the parameter-free methods meg and pr-meg")
        problem = Problem(args.problem, 1.0, args.perturb, args.seed)
        for m in methods:
            for v in nu:
                jobs.append((m, problem.exact.with_nu(v), {}))
        xlabel, xkey = "nu", "nu"

    n = None
    if args.h is not None:
        n = parse_h(args.h)
    elif not problem.from_file:
        n = 16 if penalty_mode else 32
    mesh = problem.mesh_at(n)
    h = problem.h_of(n, mesh)

    def run(job):
        method, exact, kw = job
        rec, _, _ = an.run_case(method, mesh, exact, h=h, cond=penalty_mode, **kw)
        return rec

    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        records = list(pool.map(run, jobs))
    rows = [_sweep_row(r) for r in records]

    out = Path(args.out)
    if "csv" in emit:
        atomic_write(out / "sweep.csv", format_csv(rows, SWEEP_COLUMNS, not args.no_timings))
    if "svg" in emit:
        series = {}
        for m in methods:
            sel = [r for r in rows if r["method"] == m]
            err = "err_u_weighted" if penalty_mode else "err_u_triple"
            series[f"{m} velocity"] = ([r[xkey] for r in sel], [r[err] for r in sel])
            series[f"{m} pressure"] = ([r[xkey] for r in sel], [r["err_p_l2"] for r in sel])
            if penalty_mode:
                series[f"{m} cond2"] = ([r[xkey] for r in sel], [r["cond2"] or np.nan for r in sel])
        atomic_write(out / "sweep.svg", svg_line_plot(series, xlabel=xlabel, ylabel="error",
                                                      title=f"{problem.exact.name}, h={h:.4g}"))
    print(f"{len(rows)} runs written to {out}")
    return 0


def cmd_export_vtk(args) -> int:
    method = args.method or "meg"
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if args.rho_m is not None:
        raise ConfigError("--rho-m is only meaningful in a penalty sweep")
    if args.levels is not None:
        raise ConfigError("export-vtk solves on a single mesh: use --h")
    rho = _single(args.rho, "--rho")
    _check_penalty(method, rho)
    nu = _single(args.nu, "--nu") if args.nu is not None else 1.0
    problem = Problem(args.problem, nu, args.perturb, args.seed)
    n = parse_h(args.h) if args.h is not None else (None if problem.from_file else 16)
    emit = parse_emit(args.emit, ("vtk",))
    mesh = problem.mesh_at(n)
    rec, uh, ph = an.run_case(method, mesh, problem.exact, h=problem.h_of(n, mesh), rho=rho)
    div = weak_divergence(build_stencil(uh.space), uh)
    out = Path(args.out)
    if "vtk" in emit:
        atomic_write(out / "solution.vtk", format_vtk(mesh, uh, ph, div,
                                                      f"{method} {problem.exact.name} nu={nu:g}"))
    if "csv" in emit:
        atomic_write(out / "convergence.csv", format_csv(
            [{"method": rec.method, "h": rec.h, "nu": rec.nu, "rho": rec.rho,
              "err_u_triple": rec.err_velocity_triple, "err_p_l2": rec.err_pressure_L2,
              "err_p_proj": rec.err_pressure_proj, "assemble_s": rec.assemble_s,
              "solve_s": rec.solve_s}], CONVERGENCE_COLUMNS, not args.no_timings))
    print(f"cells={mesh.num_cells} |||e_u|||={rec.err_velocity_triple:.4e} "
          f"||e_p||={rec.err_pressure_L2:.4e} max|div_w u|={np.abs(div).max():.2e}")
    return 0


def cmd_quality(args) -> int:
    if args.method is not None or args.rho is not None or args.rho_m is not None:
        raise ConfigError("quality takes no method or penalty options")
    problem = Problem(args.problem, 1.0, args.perturb, args.seed)
    levels = (parse_levels(args.levels) if args.levels is not None
              else [parse_h(args.h)] if args.h is not None
              else [None] if problem.from_file else [8])
    emit = parse_emit(args.emit, ())
    rows = []
    for n in levels:
        mesh = problem.mesh_at(n)
        row = {"h": problem.h_of(n, mesh), "cells": mesh.num_cells, "vertices": mesh.num_vertices,
               "min_measure": float(mesh.cell_measures.min())}
        if mesh.dim == 2:
            q = mesh_quality(mesh)
            row.update(min_quality=float(q.min()), mean_quality=float(q.mean()))
        rows.append(row)
        print(" ".join(f"{k}={_fmt(v) if isinstance(v, float) else v}" for k, v in row.items()))
    if "csv" in emit:
        cols = ("h", "cells", "vertices", "min_measure", "min_quality", "mean_quality")
        atomic_write(Path(args.out) / "quality.csv",
                     format_csv([{k: (str(v) if isinstance(v, int) else v) for k, v in r.items()}
                                 for r in rows], cols))
    if emit - {"csv"}:
        raise ConfigError("quality emits csv only")
    return 0


COMMANDS = {
    "convergence": cmd_convergence,
    "sweep": cmd_sweep,
    "export-vtk": cmd_export_vtk,
    "quality": cmd_quality,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stokeseg", description="EG / mEG / PR-mEG Stokes experiments.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--method", help="eg, meg or pr-meg (comma list for sweep)")
    parser.add_argument("--problem", default="vortex2d",
                        help="vortex2d, cube3d, lshape or file:<path>")
    parser.add_argument("--levels", help="comma list of n for mesh sizes 1/n")
    parser.add_argument("--h", help="single mesh size, e.g. 1/16")
    parser.add_argument("--nu", type=parse_grid, help="viscosity (a grid for sweep)")
    parser.add_argument("--rho", dest="rho_text", help="EG penalty (a grid for sweep)")
    parser.add_argument("--rho-m", dest="rho_m_text", help="hypothetical mEG penalty grid (sweep only)")
    parser.add_argument("--seed", type=int, default=0, help="seed for mesh perturbation")
    parser.add_argument("--perturb", type=float, default=0.0,
                        help="random vertex perturbation amplitude (relative to local h)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--emit", help="comma list of csv, vtk, svg")
    parser.add_argument("--cond", action="store_true", help="estimate condition numbers (convergence)")
    parser.add_argument("--no-timings", action="store_true", help="leave timing columns empty")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.rho = parse_grid(args.rho_text) if args.rho_text is not None else None
        args.rho_m = parse_grid(args.rho_m_text) if args.rho_m_text is not None else None
        thread_count()
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidPenalty) as exc:
        print(f"stokeseg: error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, SingularLocalBDM, MeshError, np.linalg.LinAlgError) as exc:
        print(f"stokeseg: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
