import numpy as np
import pytest
from scipy.special import jn_zeros

from fibrehom.bloch import Field
from fibrehom.cell import HomogenizedCoefficients
from fibrehom.limit import (assemble_limit_form, limit_bands, limit_rhs, radial_oracle,
                            solve_limit_resolvent)
from fibrehom.mesh import ParameterError, build_cross_section_mesh, fibre_submesh

from conftest import PROFILE

DIRICHLET = (jn_zeros(1, 1)[0] / 0.25) ** 2


@pytest.fixture(scope="module")
def fine():
    m = build_cross_section_mesh(0.25, 0.025)
    return HomogenizedCoefficients.compute(m, PROFILE), fibre_submesh(m)


def test_forms_are_symmetric_and_positive(coefficients, submesh, rng):
    S, MV = assemble_limit_form(rng.standard_normal(3), coefficients, submesh)
    for A in (S, MV):
        assert abs(A - A.T).max() < 1e-14
        assert np.linalg.eigvalsh(A.toarray()).min() > 0
    # S - MV is the (semi-definite) stiffness part
    assert np.linalg.eigvalsh((S - MV).toarray()).min() > -1e-10


def test_zero_band_at_origin(coefficients, submesh):
    r = limit_bands((0, 0, 0), 3, coefficients, submesh)
    assert abs(r.eigenvalues[0]) <= 2e-8
    assert r.residuals.max() < 1e-9
    assert np.all(np.diff(r.eigenvalues) >= 0)


def test_dirichlet_value_converges(coefficients, submesh, fine):
    errs = []
    for hc, sub in ((coefficients, submesh), fine):
        lam = limit_bands((0, 0, 0), 4, hc, sub).eigenvalues
        # zero-mean modes decouple from z0 and come as a degenerate pair
        assert abs(lam[2] - lam[3]) < 1e-8 * lam[2]
        errs.append(abs(lam[2] - DIRICHLET) / DIRICHLET)
    assert errs[1] < 0.03
    assert errs[0] / errs[1] >= 3


def test_radial_oracle_branch(fine):
    hc, sub = fine
    for xi3 in (0.0, 1.0, 3.0):
        fem = limit_bands((0, 0, xi3), 2, hc, sub).eigenvalues[:2]
        rad = radial_oracle(xi3, 0.25, hc, 2)
        assert np.all(np.abs(fem - rad) <= 0.01 * np.maximum(1.0, rad))


def test_bands_monotone_in_axial_xi(coefficients, submesh):
    prev = None
    for xi3 in (0.0, 0.5, 1.0, 2.0):
        lam = limit_bands((0.3, 0.1, xi3), 4, coefficients, submesh).eigenvalues[:4]
        if prev is not None:
            assert np.all(lam >= prev - 1e-9)
        prev = lam


def test_band_symmetry(coefficients, submesh, rng):
    xi = rng.standard_normal(3)
    a = limit_bands(xi, 3, coefficients, submesh).eigenvalues
    b = limit_bands(-xi, 3, coefficients, submesh).eigenvalues
    c = limit_bands(xi[[1, 0, 2]], 3, coefficients, submesh).eigenvalues
    assert np.allclose(a, b, atol=1e-10) and np.allclose(a, c, rtol=1e-8, atol=1e-10)


def test_xi_validation(coefficients, submesh):
    with pytest.raises(ParameterError):
        limit_bands((0, 1), 2, coefficients, submesh)
    with pytest.raises(ParameterError):
        limit_bands((0, np.nan, 1), 2, coefficients, submesh)


def test_resolvent_of_constant_load(coefficients, submesh, coarse_mesh):
    f = Field(np.ones(coarse_mesh.n_vertices, dtype=complex), coarse_mesh)
    z = solve_limit_resolvent((0, 0, 0), f, coefficients, submesh)
    assert abs(z.z0 - 1.0) < 1e-12
    assert np.abs(z.z1).max() < 1e-12
    assert np.allclose(z.on_cross_section(), 1.0, atol=1e-12)


def test_resolvent_residual_and_linearity(coefficients, submesh, coarse_mesh, rng):
    xi = rng.standard_normal(3)
    n = coarse_mesh.n_dofs
    v = coarse_mesh.expand(rng.standard_normal(n) + 1j * rng.standard_normal(n))
    f = Field(v, coarse_mesh)
    z = solve_limit_resolvent(xi, f, coefficients, submesh)
    S, _ = assemble_limit_form(xi, coefficients, submesh)
    vec = np.concatenate([[z.z0], z.z1[submesh.interior]])
    rhs = limit_rhs(f, submesh)
    assert np.linalg.norm(S @ vec - rhs) <= 1e-10 * np.linalg.norm(rhs)
    z2 = solve_limit_resolvent(xi, Field(2j * v, coarse_mesh), coefficients, submesh)
    assert np.allclose(z2.z1, 2j * z.z1) and abs(z2.z0 - 2j * z.z0) < 1e-12
    # the rim carries no field
    assert np.all(z.z1[submesh.boundary] == 0)


def test_form_examples(coefficients, submesh, rng):
    xi = rng.standard_normal(3)
    S, MV = assemble_limit_form(xi, coefficients, submesh)
    e0 = np.zeros(S.shape[0])
    e0[0] = 1.0
    area = submesh.area()
    expected = xi @ coefficients.Ah @ xi + coefficients.ah * xi[2] ** 2 * area + 1.0
    assert e0 @ S @ e0 == pytest.approx(expected, rel=1e-12)
    S0, MV0 = assemble_limit_form(np.zeros(3), coefficients, submesh)
    # at xi = 0 only the disk Dirichlet energy sits above the mass
    z = rng.standard_normal(S.shape[0])
    z[0] = 0.0
    assert z @ (S0 - MV0) @ z > 0
    assert abs(e0 @ (S0 - MV0) @ e0) < 1e-14


def test_in_plane_xi_enters_through_quadratic_form(coefficients, submesh):
    # on the symmetric mesh A^h is isotropic, so rotating xi' leaves the bands unchanged
    a = limit_bands((0.6, 0.8, 0.0), 4, coefficients, submesh).eigenvalues
    b = limit_bands((1.0, 0.0, 0.0), 4, coefficients, submesh).eigenvalues
    assert np.allclose(a, b, atol=1e-8)


def test_radial_oracle_self_convergence(coefficients):
    a = radial_oracle(1.0, 0.25, coefficients, 3, n=10000)
    b = radial_oracle(1.0, 0.25, coefficients, 3, n=20000)
    assert np.all(np.abs(a - b) <= 1e-6 * np.maximum(1.0, b))
    assert abs(radial_oracle(0.0, 0.25, coefficients, 1)[0]) < 1e-10
