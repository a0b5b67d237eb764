import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from fibrehom.assembly import bloch_stiffness_1d, bloch_stiffness_2d, mass_1d, mass_2d
from fibrehom.eigensolve import (KronPreconditioner, NonConvergenceError, dense_eigs, jacobi,
                                 m_orthogonal_projector, pcg, smallest_eigs)
from fibrehom.mesh import ParameterError, build_interval_mesh

from conftest import PROFILE


def _random_pencil(rng, n, spread=50.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    K = (Q * np.linspace(0.0, spread, n)) @ Q.conj().T
    B = rng.standard_normal((n, n))
    M = np.eye(n) + 0.1 * (B @ B.T) / n
    return 0.5 * (K + K.conj().T), M


def test_diagonal_examples():
    r = smallest_eigs(np.diag([1.0, 2.0, 3.0]), np.eye(3), 2)
    assert np.allclose(r.eigenvalues, [1, 2])
    r = smallest_eigs(np.diag([1.0, 2.0, 6.0]), np.diag([1.0, 1.0, 2.0]), 3)
    assert np.allclose(r.eigenvalues, [1, 2, 3])


def test_dense_eigs_examples(rng):
    r = dense_eigs(np.array([[3.0]]), np.array([[2.0]]))
    assert r.eigenvalues[0] == pytest.approx(1.5)
    K, M = _random_pencil(rng, 30)
    r = dense_eigs(M, M)
    assert np.allclose(r.eigenvalues, 1.0)
    r = dense_eigs(K, M)
    assert np.all(np.diff(r.eigenvalues) >= 0)
    assert r.residuals.max() <= 1e-10


def test_dense_cap():
    with pytest.raises(ParameterError):
        dense_eigs(sp.eye(5001), sp.eye(5001))


def test_random_pencil_matches_dense(rng):
    K, M = _random_pencil(rng, 200)
    ref = dense_eigs(K, M).eigenvalues
    pre = lambda R: np.linalg.solve(K + M, R)      # noqa: E731
    r = smallest_eigs(K, M, 4, tol=1e-10, precond=pre)
    assert np.abs(r.eigenvalues - ref[:len(r)]).max() < 1e-9
    V = r.vectors
    assert np.abs(V.conj().T @ M @ V - np.eye(V.shape[1])).max() < 1e-8
    assert r.residuals.max() <= 1e-10 * max(1.0, ref[len(r) - 1])


def test_cluster_is_not_split(rng):
    n = 120
    lam = np.concatenate([[1.0, 2.0, 2.0, 2.0], np.linspace(5, 50, n - 4)])
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    K = (Q * lam) @ Q.T
    r = smallest_eigs(K, np.eye(n), 2, precond=lambda R: np.linalg.solve(K + np.eye(n), R))
    assert len(r) == 4
    assert np.allclose(r.eigenvalues, [1, 2, 2, 2])
    assert r.clusters == [[0], [1, 2, 3]]


def test_min_max_monotonicity(rng):
    K, M = _random_pencil(rng, 150)
    B = rng.standard_normal((150, 5))
    K2 = K + B @ B.T
    pre = lambda R: np.linalg.solve(K + M, R)      # noqa: E731
    a = smallest_eigs(K, M, 5, precond=pre).eigenvalues
    b = smallest_eigs(K2, M, 5, precond=pre).eigenvalues
    assert np.all(b[:5] >= a[:5] - 2e-8)


def test_start_block_invariance(rng):
    K, M = _random_pencil(rng, 150)
    pre = lambda R: np.linalg.solve(K + M, R)      # noqa: E731
    a = smallest_eigs(K, M, 3, precond=pre, seed=1).eigenvalues
    X0 = rng.standard_normal((150, 8)) + 1j * rng.standard_normal((150, 8))
    X0 = X0 @ np.linalg.inv(np.linalg.cholesky(X0.conj().T @ M @ X0).conj().T)
    b = smallest_eigs(K, M, 3, precond=pre, X0=X0).eigenvalues
    assert np.abs(a[:3] - b[:3]).max() <= 2e-8


def test_deflation_gives_second_eigenvalue(coarse_mesh):
    K = bloch_stiffness_2d(coarse_mesh, (0.0, 0.0), "ALL")
    M = mass_2d(coarse_mesh)
    ref = sla.eigh(K.toarray(), M.toarray(), eigvals_only=True)
    one = np.ones(coarse_mesh.n_dofs, dtype=complex)
    r = smallest_eigs(K, M, 1, project=m_orthogonal_projector(one, M),
                      precond=jacobi(K, M))
    assert abs(r.eigenvalues[0] - ref[1]) <= 2e-8 * ref[1]


def test_non_convergence_carries_residuals(rng):
    K, M = _random_pencil(rng, 200, spread=1e4)
    with pytest.raises(NonConvergenceError) as info:
        smallest_eigs(K, M, 3, tol=1e-14, maxiter=3)
    assert info.value.residuals is not None and len(info.value.residuals) >= 3


def test_unreachable_tolerance_stops_early_and_stays_finite(rng):
    K, M = _random_pencil(rng, 300, spread=1e8)
    ref = sla.eigh(K, M, eigvals_only=True)[:2]
    with pytest.raises(NonConvergenceError, match="stagnated") as info:
        smallest_eigs(K, M, 2, tol=1e-30, maxiter=2000)
    # the iterate is still an accurate eigenpair, not a drifted one
    assert np.allclose(info.value.eigenvalues, ref, rtol=1e-8, atol=1e-6)
    assert np.all(info.value.residuals < 1e-3)


def test_kron_preconditioner_exact_without_binning(coarse_mesh):
    X2 = bloch_stiffness_2d(coarse_mesh, (0.3, -0.2), "MATRIX") + mass_2d(coarse_mesh)
    Y2 = mass_2d(coarse_mesh, "MATRIX") + 2.0 * mass_2d(coarse_mesh, "FIBRE")
    m1 = build_interval_mesh(8, PROFILE)
    K1, M1 = bloch_stiffness_1d(m1, 0.7, None), mass_1d(m1)
    A = (sp.kron(X2, M1) + sp.kron(Y2, K1)).toarray()
    pre = KronPreconditioner(X2, Y2, K1, M1, ratio=1.0 + 1e-12)
    x = np.random.default_rng(0).standard_normal((A.shape[0], 2)) + 0j
    assert np.abs(A @ pre(x) - x).max() < 1e-10
    # with binning the preconditioned spectrum stays within the bin factor
    coarse = KronPreconditioner(X2, Y2, K1, M1, ratio=1.3)
    P = coarse(np.eye(A.shape[0], dtype=complex))
    ev = np.linalg.eigvals(P @ A).real
    assert ev.min() > 1 / 1.3 - 1e-8 and ev.max() < 1.3 + 1e-8


def test_pcg(rng):
    K, M = _random_pencil(rng, 80)
    A = K + M
    b = rng.standard_normal(80) + 0j
    x, rel, it = pcg(A, b, tol=1e-12)
    assert rel <= 1e-12
    assert np.allclose(A @ x, b)
