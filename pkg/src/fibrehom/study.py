"""Convergence studies in eps: eigenvalues and resolvents against the limit operator.

In fixed-xi mode each sample ``xi`` gives ``theta = eps * xi``, so the limit
side is eps-independent and the error series isolates the rate in eps.
A series is trusted only if repeating it with the cross-section mesh size
halved moves every error by less than 10%. Errors below the solver floor on
both meshes (e.g. an exactly reproduced zero band) carry no mesh information
and count as trusted.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import xml.etree.ElementTree as ET
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fibrehom import bloch
from fibrehom.assembly import TensorMesh, vertex_mass_2d
from fibrehom.bloch import Field, modulate
from fibrehom.cell import HomogenizedCoefficients
from fibrehom.config import StudyConfig
from fibrehom.limit import limit_bands, solve_limit_resolvent
from fibrehom.mesh import build_cross_section_mesh, build_interval_mesh, fibre_submesh

log = logging.getLogger(__name__)

TRUST_DRIFT = 0.10

EIG_COLUMNS = ("xi1", "xi2", "xi3", "eps", "k", "lambda", "Lambda", "abs_err", "trusted")
RES_COLUMNS = ("xi1", "xi2", "xi3", "eps", "ftag", "rel_err", "trusted")
GAP_COLUMNS = ("theta1", "theta2", "theta3", "gamma", "gamma_star")


# --------------------------------------------------------------------------
# loads

def _bump(d2, radius):
    return np.maximum(1.0 - d2 / radius ** 2, 0.0) ** 2


def _periodic_d2(y1, y2, c1, c2):
    d1 = (y1 - c1 + 0.5) % 1.0 - 0.5
    d2 = (y2 - c2 + 0.5) % 1.0 - 0.5
    return d1 ** 2 + d2 ** 2


def load_function(tag: str, r: float):
    """Periodic loads ``f(y1, y2, y3)`` addressed by tag.

    ``const``: 1; ``axial``: exp(2 pi i y3); ``fibre``: a bump inside the
    disk (radius 0.8 r); ``matrix``: a bump of radius 0.2 centred at the
    cell corner, which stays clear of the disk for r < 0.5.
    """
    if tag == "const":
        return lambda y1, y2, y3: np.ones_like(y1, dtype=complex)
    if tag == "axial":
        return lambda y1, y2, y3: np.exp(2j * np.pi * y3)
    if tag == "fibre":
        return lambda y1, y2, y3: _bump(y1 ** 2 + y2 ** 2, 0.8 * r).astype(complex)
    if tag == "matrix":
        return lambda y1, y2, y3: _bump(_periodic_d2(y1, y2, 0.5, 0.5), 0.2).astype(complex)
    raise ValueError(f"unknown load tag {tag!r}")


# --------------------------------------------------------------------------
# tables

@dataclass(frozen=True)
class ConvergenceRow:
    xi: tuple
    eps: float
    key: object            # k (int) or load tag (str)
    lhs: float
    rhs: float
    error: float
    trusted: bool = False
    cluster: int = 0       # index of the degenerate cluster of k on the limit side

    @property
    def recomputed_error(self) -> float:
        return abs(self.lhs - self.rhs)


@dataclass
class FitResult:
    slope: float
    intercept: float
    residual: float
    dropped: int = 0
    note: str = ""


@dataclass
class SeriesSummary:
    xi: tuple
    key: object
    fit: FitResult | None
    trusted: bool
    ratio: float           # max / min of error / eps
    clusters: str = ""


@dataclass
class StudyTable:
    kind: str              # "eigs" or "resolvent"
    rows: list
    series: list = field(default_factory=list)

    def sorted_rows(self) -> list:
        return sorted(self.rows, key=lambda r: (r.xi, str(r.key), -r.eps))


def fit_rate(points) -> FitResult:
    """Least squares on ``(log eps, log error)``; isolated zero errors are dropped."""
    pts = [(float(e), float(v)) for e, v in points]
    if any(e <= 0 for e, _ in pts):
        raise ValueError("eps values must be positive")
    keep = [(e, v) for e, v in pts if v > 0 and np.isfinite(v)]
    dropped = len(pts) - len(keep)
    if len(keep) < 3:
        raise ValueError(f"need at least 3 positive errors, got {len(keep)}")
    x = np.log([e for e, _ in keep])
    y = np.log([v for _, v in keep])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.linalg.norm(A @ np.array([slope, intercept]) - y))
    note = f"dropped {dropped} nonpositive error(s)" if dropped else ""
    return FitResult(float(slope), float(intercept), resid, dropped, note)


# --------------------------------------------------------------------------
# discretisation context

@dataclass
class Context:
    tm: TensorMesh
    hc: HomogenizedCoefficients
    sub: object

    @classmethod
    def build(cls, cfg: StudyConfig, h: float | None = None) -> "Context":
        m2 = build_cross_section_mesh(cfg.r, h or cfg.h, cfg.layers)
        m1 = build_interval_mesh(cfg.n3, cfg.profile)
        return cls(TensorMesh(m2, m1), HomogenizedCoefficients.compute(m2, cfg.profile),
                   fibre_submesh(m2))


def _xis(cfg: StudyConfig, sample) -> list:
    s = np.asarray(sample, dtype=float)
    if cfg.mode == "fixed-xi":
        return [s for _ in cfg.eps]
    return [s / e for e in cfg.eps]


def _eig_errors(cfg: StudyConfig, sample, ctx: Context):
    """``(lambda, Lambda, cluster)`` per eps and k for one sample."""
    out = []
    X0 = None
    cached = {}
    for eps, theta, xi in zip(cfg.eps, cfg.thetas(sample), _xis(cfg, sample)):
        key = tuple(xi)
        if key not in cached:
            cached[key] = limit_bands(xi, cfg.k, ctx.hc, ctx.sub, cfg.tol)
        lim = cached[key]
        res = bloch.epsilon_bands(eps, theta, cfg.k, ctx.tm, cfg.tol, cfg.precond,
                                  seed=cfg.seed, X0=X0)
        X0 = res.vectors
        cluster_of = {i: c for c, grp in enumerate(lim.clusters) for i in grp}
        out.append([(float(res.eigenvalues[i]), float(lim.eigenvalues[i]), cluster_of.get(i, i))
                    for i in range(cfg.k)])
    return out


def _l2_tensor(values, mesh, M1) -> float:
    Mv = vertex_mass_2d(mesh)
    W = Mv @ values
    return float(np.sqrt(max(np.real(np.sum(values.conj() * (W @ M1.T))), 0.0)))


def resolvent_error(eps: float, theta, xi, tag: str, cfg: StudyConfig, ctx: Context) -> float:
    """``||u - E*(z0 + z1)|| / ||f||`` on the tensor mesh."""
    tm = ctx.tm
    f = tm.evaluate(load_function(tag, cfg.r))
    u = bloch.solve_epsilon_resolvent(eps, theta, f, tm, precond=cfg.precond)
    fv = Field.from_dofs(tm, f)
    m1 = tm.mass1()
    z = solve_limit_resolvent(xi, fv, ctx.hc, ctx.sub, m1=m1, theta_p=theta[:2])
    w = Field(np.repeat(z.on_cross_section()[:, None], tm.n1, axis=1), tm.cross)
    w = modulate(theta[:2], w, "adjoint")
    diff = Field.from_dofs(tm, u).values - w.values
    M1 = np.asarray(m1.todense())
    return _l2_tensor(diff, tm.cross, M1) / _l2_tensor(fv.values, tm.cross, M1)


def _res_errors(cfg: StudyConfig, sample, ctx: Context):
    return [[resolvent_error(eps, theta, xi, tag, cfg, ctx) for tag in cfg.ftags]
            for eps, theta, xi in zip(cfg.eps, cfg.thetas(sample), _xis(cfg, sample))]


def _run_sample(args):
    kind, cfg, sample, h = args
    ctx = Context.build(cfg, h)
    if kind == "eigs":
        return _eig_errors(cfg, sample, ctx)
    return _res_errors(cfg, sample, ctx)


def _dispatch(kind: str, cfg: StudyConfig) -> dict:
    """Errors per (sample, mesh level); level 1 is the halved mesh."""
    levels = [cfg.h] + ([cfg.h / 2] if cfg.trust else [])
    jobs = [(kind, cfg, tuple(s), h) for h in levels for s in cfg.samples]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_run_sample, jobs))
    else:
        results = [_run_sample(j) for j in jobs]
    return {(j[2], levels.index(j[3])): r for j, r in zip(jobs, results)}


RESOLVENT_FLOOR = 1e-10


def _drift_ok(a: float, b: float, floor: float = 0.0) -> bool:
    if a == b or max(abs(a), abs(b)) <= floor:
        return True
    return abs(a - b) < TRUST_DRIFT * max(abs(a), abs(b))


def _summarise(table: StudyTable, floor) -> None:
    """Fit every series; ``floor(row)`` is the error below which a row is round-off."""
    groups: dict = {}
    for row in table.rows:
        groups.setdefault((row.xi, row.key), []).append(row)
    for (xi, key), rows in sorted(groups.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        rows = sorted(rows, key=lambda r: -r.eps)
        errs = np.array([r.error for r in rows])
        eps = np.array([r.eps for r in rows])
        if all(r.error <= floor(r) for r in rows):
            fit = FitResult(math.nan, math.nan, math.nan, note="all errors at solver floor")
        else:
            try:
                fit = fit_rate(list(zip(eps, errs)))
            except ValueError as exc:
                fit = FitResult(math.nan, math.nan, math.nan, note=str(exc))
        pos = errs > 0
        ratio = float((errs[pos] / eps[pos]).max() / (errs[pos] / eps[pos]).min()) if pos.any() \
            else math.nan
        clusters = ",".join(sorted({str(r.cluster) for r in rows})) if table.kind == "eigs" else ""
        table.series.append(SeriesSummary(xi, key, fit, all(r.trusted for r in rows), ratio,
                                          clusters))


def eigenvalue_convergence_study(cfg: StudyConfig) -> StudyTable:
    """Rows ``|lambda_eps^(k)(theta) - Lambda^(k)(xi)|`` over eps, with fitted slopes."""
    data = _dispatch("eigs", cfg)
    rows = []
    for s in cfg.samples:
        s = tuple(s)
        for i, xi in enumerate(_xis(cfg, s)):
            for k in range(cfg.k):
                lam, Lam, cl = data[(s, 0)][i][k]
                err = abs(lam - Lam)
                trusted = False
                if cfg.trust:
                    lam2, Lam2, _ = data[(s, 1)][i][k]
                    floor = 2 * cfg.tol * max(1.0, abs(Lam))
                    trusted = _drift_ok(err, abs(lam2 - Lam2), floor)
                rows.append(ConvergenceRow(tuple(float(v) for v in xi), cfg.eps[i], k + 1,
                                           lam, Lam, err, trusted, cl))
    table = StudyTable("eigs", rows)
    _summarise(table, lambda r: 2 * cfg.tol * max(1.0, abs(r.rhs)))
    return table


def resolvent_convergence_study(cfg: StudyConfig) -> StudyTable:
    """Rows ``||u_eps - E*(z0 + z1)|| / ||f||`` over eps, with fitted slopes."""
    data = _dispatch("resolvent", cfg)
    rows = []
    for s in cfg.samples:
        s = tuple(s)
        for i, xi in enumerate(_xis(cfg, s)):
            for j, tag in enumerate(cfg.ftags):
                err = data[(s, 0)][i][j]
                trusted = cfg.trust and _drift_ok(err, data[(s, 1)][i][j], RESOLVENT_FLOOR)
                rows.append(ConvergenceRow(tuple(float(v) for v in xi), cfg.eps[i], tag,
                                           err, 0.0, err, bool(trusted)))
    table = StudyTable("resolvent", rows)
    _summarise(table, lambda r: RESOLVENT_FLOOR)
    return table


# --------------------------------------------------------------------------
# gap scans

def theta_grid(n: int) -> list:
    """``n^3`` points ``2 pi j / n`` per axis, ``j`` centred on zero, inside [-pi, pi)."""
    js = np.arange(n) - n // 2
    vals = 2 * np.pi * js / n
    vals = vals[(vals >= -np.pi) & (vals < np.pi)]
    return [np.array([a, b, c]) for a in vals for b in vals for c in vals]


def gap_scan(cfg: StudyConfig, h: float | None = None) -> list:
    """``(theta, gamma, gamma_star)`` over the grid; ``gamma_star`` is nan at 0."""
    m2 = build_cross_section_mesh(cfg.r, h or cfg.h, cfg.layers)
    tm = TensorMesh(m2, build_interval_mesh(cfg.n3, cfg.profile))
    basis = bloch.SubspaceBasis(tm)
    out = []
    for theta in theta_grid(cfg.grid):
        g = bloch.coercivity_gap(theta, tm, basis, seed=cfg.seed)
        gs = bloch.directional_gap(theta, tm, seed=cfg.seed, basis=basis) if np.any(theta) else math.nan
        out.append((tuple(float(t) for t in theta), g, gs))
    return out


# --------------------------------------------------------------------------
# emission

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def table_records(table: StudyTable) -> list:
    recs = []
    for r in table.sorted_rows():
        if table.kind == "eigs":
            recs.append((*r.xi, r.eps, r.key, r.lhs, r.rhs, r.error, r.trusted))
        else:
            recs.append((*r.xi, r.eps, r.key, r.error, r.trusted))
    return recs


def to_csv(columns, records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([_fmt(v) for v in rec])
    return buf.getvalue()


def parse_csv(text: str) -> list:
    """Inverse of ``to_csv``: a list of dicts with numeric fields converted."""
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {}
        for key, val in rec.items():
            if key in ("k",):
                row[key] = int(val)
            elif key == "trusted":
                row[key] = val == "1"
            elif key == "ftag":
                row[key] = val
            else:
                row[key] = float(val)
        out.append(row)
    return out


def _series_points(table: StudyTable) -> dict:
    series: dict = {}
    for r in table.sorted_rows():
        series.setdefault((r.xi, r.key), []).append((r.eps, r.error))
    return series


def to_svg(table: StudyTable, width: int = 640, height: int = 480) -> str:
    """Log-log plot of error against eps, one polyline per series."""
    series = _series_points(table)
    pts = [(e, v) for s in series.values() for e, v in s if v > 0]
    if not pts:
        raise ValueError("nothing positive to plot")
    lx = np.log10([e for e, _ in pts])
    ly = np.log10([v for _, v in pts])
    x0, x1 = lx.min() - 0.1, lx.max() + 0.1
    y0, y1 = ly.min() - 0.3, ly.max() + 0.3
    pad = 60

    def sx(v):
        return pad + (math.log10(v) - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (math.log10(v) - y0) / (y1 - y0) * (height - 2 * pad)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width),
                     height=str(height), viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    ET.SubElement(svg, "line", x1=str(pad), y1=str(height - pad), x2=str(width - pad),
                  y2=str(height - pad), stroke="black")
    ET.SubElement(svg, "line", x1=str(pad), y1=str(pad), x2=str(pad), y2=str(height - pad),
                  stroke="black")
    lab = ET.SubElement(svg, "text", x=str(width // 2), y=str(height - 15), **{"text-anchor": "middle"})
    lab.text = "eps (log)"
    lab = ET.SubElement(svg, "text", x="15", y=str(height // 2),
                        transform=f"rotate(-90 15 {height // 2})", **{"text-anchor": "middle"})
    lab.text = "error (log)"
    colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    for i, ((xi, key), s) in enumerate(series.items()):
        good = [(e, v) for e, v in s if v > 0]
        if not good:
            continue
        coords = " ".join(f"{sx(e):.2f},{sy(v):.2f}" for e, v in good)
        line = ET.SubElement(svg, "polyline", points=coords, fill="none",
                             stroke=colours[i % len(colours)])
        line.set("stroke-width", "1.5")
        title = ET.SubElement(line, "title")
        title.text = f"xi={xi} {key}"
    return ET.tostring(svg, encoding="unicode")


def emit(table: StudyTable, path, fmt: str = "csv") -> Path:
    """Write ``table`` as CSV (column contract per kind) or as an SVG plot."""
    if not table.rows:
        raise ValueError("empty table")
    path = Path(path)
    if fmt == "csv":
        cols = EIG_COLUMNS if table.kind == "eigs" else RES_COLUMNS
        text = to_csv(cols, table_records(table))
    elif fmt == "svg":
        text = to_svg(table)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def summary_csv(table: StudyTable) -> str:
    cols = ("xi1", "xi2", "xi3", "key", "slope", "intercept", "fit_residual", "ratio",
            "trusted", "clusters", "note")
    recs = [(*s.xi, s.key, s.fit.slope, s.fit.intercept, s.fit.residual, s.ratio, s.trusted,
             s.clusters, s.fit.note) for s in table.series]
    return to_csv(cols, recs)
