"""Acceptance criteria 1-9.

Each test records one ``criterion N: PASS|FAIL ...`` line; the lines are
printed together at the end of the pytest run. Criteria 2, 3, 6 and 8 are
long (``-m "not slow"`` skips them).
"""
import dataclasses
import time

import numpy as np
import pytest
import scipy.linalg as sla
from scipy.special import jn_zeros

from fibrehom import study
from fibrehom.assembly import (TensorMesh, bloch_stiffness_1d, bloch_stiffness_2d, compose_pencil,
                               dense_oracle_form, mass_1d, mass_2d)
from fibrehom.bloch import epsilon_bands
from fibrehom.cell import HomogenizedCoefficients
from fibrehom.config import StudyConfig
from fibrehom.limit import limit_bands, radial_oracle
from fibrehom.mesh import build_cross_section_mesh, build_interval_mesh, fibre_submesh

from conftest import PROFILE, record_criterion

EPS = (0.4, 0.2, 0.1, 0.05)
XIS = ((0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (1.0, 1.0, 2.0))


def _report(n, ok, detail):
    record_criterion(n, ok, detail)
    assert ok, detail


def test_criterion_1_constant_load():
    cfg = StudyConfig(h=0.1, layers=2, n3=16, eps=EPS, samples=((0.0, 0.0, 0.0),))
    ctx = study.Context.build(cfg)
    errs = [study.resolvent_error(e, np.zeros(3), np.zeros(3), "const", cfg, ctx) for e in EPS]
    _report(1, max(errs) <= 1e-10, f"max error {max(errs):.2e} over eps {EPS} (bound 1e-10)")


def _series_report(table, check_ratio):
    trusted = [s for s in table.series if s.trusted]
    bad = []
    for s in trusted:
        if not s.fit.slope >= 0.9 or (check_ratio and not s.ratio <= 5.0):
            bad.append(s)
    lines = [f"xi={s.xi} {s.key}: slope {s.fit.slope:.3f} ratio {s.ratio:.2f}"
             f"{'' if s.trusted else ' (untrusted)'}" for s in table.series]
    return trusted, bad, lines


@pytest.mark.slow
def test_criterion_2_eigenvalue_rate():
    cfg = StudyConfig(h=0.02, layers=4, n3=64, eps=EPS, samples=XIS, k=3)
    t0 = time.perf_counter()
    table = study.eigenvalue_convergence_study(cfg)
    minutes = (time.perf_counter() - t0) / 60
    trusted, bad, lines = _series_report(table, check_ratio=True)
    ok = bool(trusted) and not bad
    _report(2, ok, f"{len(trusted)}/{len(table.series)} series trusted, {len(bad)} violate "
                   f"slope>=0.9/ratio<=5, {minutes:.1f} min\n    " + "\n    ".join(lines))


@pytest.mark.slow
def test_criterion_3_resolvent_rate():
    cfg = StudyConfig(h=0.02, layers=4, n3=64, eps=EPS, samples=XIS,
                      ftags=("axial", "fibre", "matrix"))
    t0 = time.perf_counter()
    table = study.resolvent_convergence_study(cfg)
    minutes = (time.perf_counter() - t0) / 60
    trusted, bad, lines = _series_report(table, check_ratio=False)
    ok = bool(trusted) and not bad
    _report(3, ok, f"{len(trusted)}/{len(table.series)} series trusted, {len(bad)} with slope < 0.9, "
                   f"{minutes:.1f} min\n    " + "\n    ".join(lines))


def test_criterion_4_oracle_equivalence():
    rng = np.random.default_rng(4)
    worst_mv, worst_ev, cases = 0.0, 0.0, 0
    for h, n3 in ((0.125, 8), (0.1, 16)):
        m2, m1 = build_cross_section_mesh(0.25, h), build_interval_mesh(n3, PROFILE)
        tm = TensorMesh(m2, m1)
        assert tm.n <= 5000
        for _ in range(3):
            eps, theta = rng.uniform(0.05, 0.9), rng.uniform(-np.pi, np.pi, 3)
            K, M = compose_pencil(eps, theta, tm)
            Kd, Md = dense_oracle_form(eps, theta, m2, m1)
            X = rng.standard_normal((tm.n, 4)) + 1j * rng.standard_normal((tm.n, 4))
            for A, Ad in ((K, Kd), (M, Md)):
                ref = Ad @ X
                worst_mv = max(worst_mv, np.linalg.norm(A @ X - ref) / np.linalg.norm(ref))
            ref = sla.eigh(Kd, Md, eigvals_only=True, subset_by_index=[0, 9])
            got = epsilon_bands(eps, theta, 10, tm, tol=1e-10).eigenvalues[:10]
            worst_ev = max(worst_ev, float(np.max(np.abs(got - ref) / np.maximum(1.0, ref))))
            cases += 1
    ok = worst_mv <= 1e-12 and worst_ev <= 1e-9
    _report(4, ok, f"{cases} random (eps, theta): matvec rel {worst_mv:.1e} (<=1e-12), "
                   f"10 lowest eigenvalues {worst_ev:.1e} (<=1e-9, relative above 1)")


def test_criterion_5_homogenised_coefficients():
    m = build_cross_section_mesh(0.25, 0.05, 4)
    hc = HomogenizedCoefficients.compute(m, PROFILE)
    d33 = abs(hc.Ah[2, 2] - (1.0 - m.region_area("FIBRE")))
    d_iso = abs(hc.Ah[0, 0] - hc.Ah[1, 1])
    d12 = max(abs(hc.Ah[0, 1]), abs(hc.Ah[1, 0]))
    r = 0.1
    dil = HomogenizedCoefficients.compute(build_cross_section_mesh(r, 0.02), PROFILE)
    d_dil = abs(dil.Ah[0, 0] - (1 - np.pi * r ** 2) / (1 + np.pi * r ** 2))
    d_ah = abs(hc.ah - 1.6)
    ok = d33 <= 1e-12 and d_iso <= 1e-10 and d12 <= 1e-8 and d_dil <= 1e-2 and d_ah <= 1e-12
    _report(5, ok, f"A33 {d33:.1e}, A11-A22 {d_iso:.1e}, A12 {d12:.1e}, dilute {d_dil:.1e}, "
                   f"a^h {d_ah:.1e}")


@pytest.mark.slow
def test_criterion_6_limit_spectrum():
    ref = (jn_zeros(1, 1)[0] / 0.25) ** 2
    disc, zero, radial = [], 0.0, 0.0
    for h in (0.02, 0.01):
        m = build_cross_section_mesh(0.25, h, 4)
        hc, sub = HomogenizedCoefficients.compute(m, PROFILE), fibre_submesh(m)
        lam = limit_bands((0, 0, 0), 4, hc, sub).eigenvalues
        zero = max(zero, abs(lam[0]))
        # nearest eigenvalue to the zero-mean Dirichlet value
        disc.append(float(np.min(np.abs(lam - ref)) / ref))
        if h == 0.02:
            for xi3 in (0.0, 1.0, 2.0):
                fem = limit_bands((0, 0, xi3), 2, hc, sub).eigenvalues[:2]
                rad = radial_oracle(xi3, 0.25, hc, 2)
                radial = max(radial, float(np.max(np.abs(fem - rad) / np.maximum(1.0, rad))))
    ok = zero <= 2e-8 and disc[0] <= 0.01 and disc[0] / disc[1] >= 3 and radial <= 0.01
    _report(6, ok, f"Lambda1(0) {zero:.1e}; (j11/r)^2 rel error {disc[0]:.2e} at h=0.02, "
                   f"{disc[1]:.2e} at h=0.01 (factor {disc[0] / disc[1]:.2f}); "
                   f"radial branch {radial:.2e}")


def test_criterion_7_bloch_consistency():
    tp = (0.3, 0.0)
    low, second = [], []
    exact2 = (2 * np.pi - 0.3) ** 2
    for h in (0.1, 0.05, 0.025):
        m = build_cross_section_mesh(0.25, h)
        lam = sla.eigh(bloch_stiffness_2d(m, tp, "ALL").toarray(), mass_2d(m).toarray(),
                       eigvals_only=True, subset_by_index=[0, 1])
        low.append(abs(lam[0] - 0.09))
        second.append(abs(lam[1] - exact2))
    r2 = [a / b for a, b in zip(second, second[1:])]
    m1 = build_interval_mesh(64, PROFILE)
    lam1 = sla.eigh(bloch_stiffness_1d(m1, 0.01, PROFILE).toarray(), mass_1d(m1).toarray(),
                    eigvals_only=True, subset_by_index=[0, 0])[0]
    ratio1d = lam1 / 0.01 ** 2
    # the plane wave exp(i theta'.y) is represented by the constant, so the
    # lowest error is round-off and has no observable rate; the O(h^2) ratio is
    # read off the next branch |theta' - 2 pi e1|^2 instead
    ok = max(low) <= 1e-10 and min(r2) >= 3 and abs(ratio1d - 1.6) <= 0.016
    _report(7, ok, f"lowest |lambda - |theta'|^2| {max(low):.1e} at h=0.1/0.05/0.025 (exact, no rate); "
                   f"second-branch ratios {r2[0]:.2f}, {r2[1]:.2f}; 1D lambda/theta3^2 {ratio1d:.6f}")


@pytest.mark.slow
def test_criterion_8_gap_scans():
    cfg = StudyConfig(h=0.05, layers=4, n3=16, grid=5)
    mins = []
    t0 = time.perf_counter()
    for h in (0.05, 0.025):
        scan = study.gap_scan(cfg, h)
        g = min(s[1] for s in scan)
        gs = min(s[2] for s in scan if not np.isnan(s[2]))
        mins.append((g, gs))
    minutes = (time.perf_counter() - t0) / 60
    (g1, s1), (g2, s2) = mins
    dg, ds = abs(g1 - g2) / g2, abs(s1 - s2) / s2
    ok = min(g1, g2, s1, s2) > 0 and dg < 0.05 and ds < 0.05
    _report(8, ok, f"min gamma {g1:.4f} -> {g2:.4f} (drift {100 * dg:.1f}%), "
                   f"min gamma* {s1:.4f} -> {s2:.4f} (drift {100 * ds:.1f}%), "
                   f"h 0.05 -> 0.025, {minutes:.1f} min")


def test_criterion_9_determinism(tmp_path):
    base = StudyConfig(h=0.1, layers=2, n3=16, eps=(0.4, 0.2, 0.1), samples=((1.0, 0.0, 0.0),),
                       k=2, ftags=("axial", "fibre"))
    same = True
    for kind, run in (("eigs", study.eigenvalue_convergence_study),
                      ("resolvent", study.resolvent_convergence_study)):
        blobs = []
        for i in range(2):
            cfg = dataclasses.replace(base)
            blobs.append(study.emit(run(cfg), tmp_path / f"{kind}{i}.csv").read_bytes())
        same &= blobs[0] == blobs[1]
    _report(9, same, "eigenvalue and resolvent study CSVs byte-identical across two runs"
            if same else "CSV bytes differ between identical runs")
