"""Command line entry point: ``fibrehom <subcommand> --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from fibrehom import bloch, study
from fibrehom.assembly import TensorMesh
from fibrehom.cell import HomogenizedCoefficients
from fibrehom.config import ConfigError, StudyConfig, load_config
from fibrehom.limit import limit_bands
from fibrehom.mesh import build_cross_section_mesh, build_interval_mesh, fibre_submesh

log = logging.getLogger("fibrehom")


def _mesh(cfg: StudyConfig):
    return build_cross_section_mesh(cfg.r, cfg.h, cfg.layers)


def cmd_homogenize(cfg: StudyConfig, out: Path) -> list:
    hc = HomogenizedCoefficients.compute(_mesh(cfg), cfg.profile)
    path = out / "coefficients.txt"
    hc.save(path)
    return [path]


def cmd_bands_eps(cfg: StudyConfig, out: Path) -> list:
    tm = TensorMesh(_mesh(cfg), build_interval_mesh(cfg.n3, cfg.profile))
    recs = []
    for s in cfg.samples:
        X0 = None
        for eps, theta in zip(cfg.eps, cfg.thetas(s)):
            res = bloch.epsilon_bands(eps, theta, cfg.k, tm, cfg.tol, cfg.precond,
                                      seed=cfg.seed, X0=X0)
            X0 = res.vectors
            recs.extend((*map(float, theta), eps, k + 1, float(lam))
                        for k, lam in enumerate(res.eigenvalues[:cfg.k]))
    recs.sort(key=lambda r: (r[:3], -r[3], r[4]))
    path = out / "bands_eps.csv"
    path.write_text(study.to_csv(("theta1", "theta2", "theta3", "epsilon", "k", "lambda"), recs))
    return [path]


def cmd_bands_limit(cfg: StudyConfig, out: Path) -> list:
    m2 = _mesh(cfg)
    hc = HomogenizedCoefficients.compute(m2, cfg.profile)
    sub = fibre_submesh(m2)
    xis = cfg.samples if cfg.mode == "fixed-xi" else [tuple(np.asarray(s) / e)
                                                      for s in cfg.samples for e in cfg.eps]
    recs = []
    for xi in xis:
        res = limit_bands(xi, cfg.k, hc, sub, cfg.tol)
        recs.extend((*map(float, xi), k + 1, float(lam))
                    for k, lam in enumerate(res.eigenvalues[:cfg.k]))
    recs.sort(key=lambda r: (r[:3], r[3]))
    path = out / "bands_limit.csv"
    path.write_text(study.to_csv(("xi1", "xi2", "xi3", "k", "Lambda"), recs))
    return [path]


def _write_study(table, out: Path, stem: str) -> list:
    paths = [study.emit(table, out / f"{stem}.csv", "csv")]
    (out / f"{stem}_fits.csv").write_text(study.summary_csv(table))
    paths.append(out / f"{stem}_fits.csv")
    try:
        paths.append(study.emit(table, out / f"{stem}.svg", "svg"))
    except ValueError as exc:   # e.g. all errors zero
        log.warning("no plot: %s", exc)
    return paths


def cmd_converge_eigs(cfg: StudyConfig, out: Path) -> list:
    return _write_study(study.eigenvalue_convergence_study(cfg), out, "converge_eigs")


def cmd_converge_resolvent(cfg: StudyConfig, out: Path) -> list:
    return _write_study(study.resolvent_convergence_study(cfg), out, "converge_resolvent")


def cmd_gaps(cfg: StudyConfig, out: Path) -> list:
    scan = study.gap_scan(cfg)
    recs = [(*theta, g, gs) for theta, g, gs in sorted(scan)]
    path = out / "gaps.csv"
    path.write_text(study.to_csv(study.GAP_COLUMNS, recs))
    g_min = min(g for _, g, _ in scan)
    gs_min = min(gs for _, _, gs in scan if not math.isnan(gs))
    log.info("min gamma %.6g, min gamma* %.6g", g_min, gs_min)
    return [path]


COMMANDS = {
    "homogenize": cmd_homogenize,
    "bands-eps": cmd_bands_eps,
    "bands-limit": cmd_bands_limit,
    "converge-eigs": cmd_converge_eigs,
    "converge-resolvent": cmd_converge_resolvent,
    "gaps": cmd_gaps,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fibrehom", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", required=True, type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"fibrehom: {exc}", file=sys.stderr)
        return 2
    args.out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    paths = COMMANDS[args.command](cfg, args.out)
    for path in paths:
        print(path)
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
