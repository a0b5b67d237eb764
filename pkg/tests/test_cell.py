import numpy as np
import pytest

from fibrehom.assembly import bloch_stiffness_2d, mass_2d
from fibrehom.cell import (HomogenizedCoefficients, harmonic_mean, homogenized_matrix,
                           solve_cell_problem)
from fibrehom.mesh import CoefficientProfile, build_cross_section_mesh

from conftest import PROFILE


def test_ah33_is_matrix_area(coarse_mesh, coefficients):
    Ah = coefficients.Ah
    assert abs(Ah[2, 2] - (1.0 - coarse_mesh.region_area("FIBRE"))) < 1e-12
    assert np.all(Ah[2, :2] == 0) and np.all(Ah[:2, 2] == 0)


@pytest.mark.parametrize("layers", [0, 2])
def test_symmetric_mesh_gives_isotropic_tensor(layers):
    hc = HomogenizedCoefficients.compute(build_cross_section_mesh(0.25, 0.1, layers), PROFILE)
    assert abs(hc.Ah[0, 0] - hc.Ah[1, 1]) < 1e-10
    assert abs(hc.Ah[0, 1]) < 1e-8 and abs(hc.Ah[1, 0]) < 1e-8


def test_tensor_is_symmetric_and_bounded(coefficients, coarse_mesh):
    Ah = coefficients.Ah[:2, :2]
    assert np.allclose(Ah, Ah.T, atol=1e-12)
    # perforation lowers the conductivity below the matrix volume fraction
    ev = np.linalg.eigvalsh(0.5 * (Ah + Ah.T))
    assert 0 < ev.min() and ev.max() <= 1.0 - coarse_mesh.region_area("FIBRE") + 1e-12


def test_dilute_limit():
    r = 0.1
    hc = HomogenizedCoefficients.compute(build_cross_section_mesh(r, 0.025), PROFILE)
    ref = (1 - np.pi * r ** 2) / (1 + np.pi * r ** 2)
    assert abs(hc.Ah[0, 0] - ref) <= 1e-2


def test_corrector_solves_the_cell_problem(coarse_mesh):
    sol = solve_cell_problem(coarse_mesh, 1)
    assert sol.residual < 1e-10
    # zero matrix mean
    w = np.asarray(mass_2d(coarse_mesh, "MATRIX").sum(axis=0)).ravel()
    assert abs(w @ sol.values) < 1e-12
    K = bloch_stiffness_2d(coarse_mesh, (0.0, 0.0), "MATRIX").real
    # energy identity: Ah11 = |Y_m| - a(N, N)
    N = sol.values
    Ah = homogenized_matrix(coarse_mesh)
    assert abs(Ah[0, 0] - (1.0 - coarse_mesh.region_area("FIBRE") - N @ (K @ N))) < 1e-10
    with pytest.raises(ValueError):
        solve_cell_problem(coarse_mesh, 3)


def test_reflection_maps_correctors(coarse_mesh):
    # y1 -> -y1 flips the sign of N_1
    m = coarse_mesh
    n1 = solve_cell_problem(m, 1).vertex_values()
    x, y = m.vertices.T
    key = {(round(a, 10) + 0.0, round(b, 10) + 0.0): i for i, (a, b) in enumerate(zip(x, y))}
    mirror = np.array([key[(round(-a, 10) + 0.0, round(b, 10) + 0.0)] for a, b in zip(x, y)])
    mat = np.unique(m.triangles[m.region_mask("MATRIX")])
    assert np.allclose(n1[mirror][mat], -n1[mat], atol=1e-10)


@pytest.mark.parametrize("values,bps,expected", [
    ((1.0, 4.0), (0.0, 0.5), 1.6),
    ((2.0,), (0.0,), 2.0),
    ((1.0, 2.0, 4.0), (0.0, 0.25, 0.75), 1.0 / (0.25 + 0.25 + 0.0625)),
])
def test_harmonic_mean_examples(values, bps, expected):
    assert abs(harmonic_mean(CoefficientProfile(values, bps)) - expected) < 1e-12


def test_coefficients_text_round_trip(tmp_path, coefficients):
    coefficients.save(tmp_path / "c.txt")
    back = HomogenizedCoefficients.from_text((tmp_path / "c.txt").read_text())
    assert np.array_equal(back.Ah, coefficients.Ah)
    assert back.ah == coefficients.ah
    assert back.quadrature == "exact P1"
    assert back.r == coefficients.r and back.h == coefficients.h
    with pytest.raises(ValueError):
        HomogenizedCoefficients.from_text("nonsense v1\n")


def test_corrector_symmetries(coarse_mesh):
    m = coarse_mesh
    x, y = m.vertices.T
    key = {(round(a, 10) + 0.0, round(b, 10) + 0.0): i for i, (a, b) in enumerate(zip(x, y))}
    image = lambda gx, gy: np.array([key[(round(a, 10) + 0.0, round(b, 10) + 0.0)]   # noqa: E731
                                     for a, b in zip(gx, gy)])
    mat = np.unique(m.triangles[m.region_mask("MATRIX")])
    n1 = solve_cell_problem(m, 1).vertex_values()
    n2 = solve_cell_problem(m, 2).vertex_values()
    assert np.allclose(n1[image(x, -y)][mat], n1[mat], atol=1e-10)      # even in y2
    assert np.allclose(n2[image(y, x)][mat], n1[mat], atol=1e-10)       # swap


def test_voigt_bound_and_refinement():
    vals, areas = [], []
    for h in (0.1, 0.05, 0.025):
        m = build_cross_section_mesh(0.25, h)
        vals.append(homogenized_matrix(m)[0, 0])
        areas.append(1.0 - m.region_area("FIBRE"))
    assert all(0 < v <= a + 1e-8 for v, a in zip(vals, areas))
    assert abs(vals[0] - vals[1]) / abs(vals[1] - vals[2]) >= 3


def test_harmonic_mean_properties(rng):
    for _ in range(20):
        n = rng.integers(1, 5)
        bps = (0.0, *np.sort(rng.choice(np.arange(1, 20), n - 1, replace=False) / 20))
        prof = CoefficientProfile(tuple(rng.uniform(0.2, 5.0, n)), bps)
        ah = harmonic_mean(prof)
        assert ah <= float(np.dot(prof.lengths, prof.values)) + 1e-12
        assert harmonic_mean(prof.shifted(rng.uniform())) == pytest.approx(ah, rel=1e-12)
