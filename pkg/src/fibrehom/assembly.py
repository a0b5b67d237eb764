"""P1 assembly of the Bloch forms and the Kronecker-structured fibre pencil.

Matrices follow the convention ``A[i, j] = form(phi_j, phi_i)`` so that
``form(u, v) = v^H A u`` for nodal vectors. Tensor-product vectors are
ordered ``index = i2 * n1 + i1`` (cross-section node ``i2``, axial node ``i1``),
which matches ``numpy.kron(A2, A1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from fibrehom._ext.kernels import periodic_tridiag_apply, seg_bloch_entries, tri_bloch_entries
from fibrehom.mesh import (FIBRE, MATRIX, CoefficientProfile, ParameterError,
                           PeriodicMesh1D, PeriodicMesh2D)

DENSE_CAP = 5000


def _scatter(rows, cols, vals, n) -> sp.csr_matrix:
    A = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _tri_index(m: PeriodicMesh2D, mask):
    t = m.dof[m.triangles[mask]]
    rows = np.repeat(t, 3, axis=1)
    cols = np.tile(t, (1, 3))
    return rows, cols


def mass_2d(m: PeriodicMesh2D, region: str = "ALL") -> sp.csr_matrix:
    mask = m.region_mask(region)
    _, M = tri_bloch_entries(m.vertices, np.ascontiguousarray(m.triangles[mask]), 0.0, 0.0)
    rows, cols = _tri_index(m, mask)
    return _scatter(rows, cols, M, m.n_dofs)


def vertex_mass_2d(m: PeriodicMesh2D, region: str = "ALL") -> sp.csr_matrix:
    """Mass matrix on the unglued vertex set (for non-periodic, modulated fields)."""
    mask = m.region_mask(region)
    tri = np.ascontiguousarray(m.triangles[mask])
    _, M = tri_bloch_entries(m.vertices, tri, 0.0, 0.0)
    return _scatter(np.repeat(tri, 3, axis=1), np.tile(tri, (1, 3)), M, m.n_vertices)


def triangle_geometry(vertices, triangles):
    """Areas ``(nt,)`` and barycentric gradients ``(nt, 3, 2)``."""
    p = vertices[triangles]
    x, y = p[..., 0], p[..., 1]
    det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / det[:, None]
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / det[:, None]
    return 0.5 * det, np.stack([gx, gy], axis=2)


def bloch_stiffness_2d(m: PeriodicMesh2D, theta_p, region: str = "ALL") -> sp.csr_matrix:
    """Matrix of ``int |(grad' + i theta') u|^2`` over ``region``."""
    t1, t2 = (float(t) for t in theta_p)
    mask = m.region_mask(region)
    K, _ = tri_bloch_entries(m.vertices, np.ascontiguousarray(m.triangles[mask]), t1, t2)
    rows, cols = _tri_index(m, mask)
    return _scatter(rows, cols, K, m.n_dofs)


def mass_1d(m: PeriodicMesh1D) -> sp.csr_matrix:
    _, M = seg_bloch_entries(m.lengths, np.ones(m.n), 0.0)
    e = m.elements
    return _scatter(np.repeat(e, 2, axis=1), np.tile(e, (1, 2)), M, m.n)


def bloch_stiffness_1d(m: PeriodicMesh1D, theta3: float,
                       profile: CoefficientProfile | None = None) -> sp.csr_matrix:
    """Matrix of ``int a |(d3 + i theta3) u|^2``; ``profile=None`` means ``a = 1``."""
    coef = np.ones(m.n) if profile is None else m.element_coefficient(profile)
    K, _ = seg_bloch_entries(m.lengths, np.ascontiguousarray(coef, dtype=float), float(theta3))
    e = m.elements
    return _scatter(np.repeat(e, 2, axis=1), np.tile(e, (1, 2)), K, m.n)


def hermitian_defect(A) -> float:
    D = A - A.conj().T
    if sp.issparse(D):
        return float(abs(D).max()) if D.nnz else 0.0
    return float(np.abs(D).max())


def export_coo(A, path) -> None:
    """Write a form as ``i j re im`` lines."""
    C = sp.coo_matrix(A)
    with open(Path(path), "w") as fh:
        for i, j, v in zip(C.row, C.col, C.data):
            v = complex(v)
            fh.write(f"{i} {j} {v.real:.17g} {v.imag:.17g}\n")


def import_coo(path, n: int) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    vals = data[:, 2] + 1j * data[:, 3]
    return sp.csr_matrix((vals, (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, n))


# --------------------------------------------------------------------------
# tensor-product structure

@dataclass
class TensorMesh:
    """Cross-section mesh times axial mesh, with cached parameter-free factors."""

    cross: PeriodicMesh2D
    axial: PeriodicMesh1D
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def profile(self) -> CoefficientProfile:
        return self.axial.profile

    @property
    def n2(self) -> int:
        return self.cross.n_dofs

    @property
    def n1(self) -> int:
        return self.axial.n

    @property
    def n(self) -> int:
        return self.n2 * self.n1

    def mass2(self, region: str) -> sp.csr_matrix:
        key = ("M2", region)
        if key not in self._cache:
            self._cache[key] = mass_2d(self.cross, region)
        return self._cache[key]

    def mass1(self) -> sp.csr_matrix:
        if "M1" not in self._cache:
            self._cache["M1"] = mass_1d(self.axial)
        return self._cache["M1"]

    def mass(self) -> "KronForm":
        return KronForm([(1.0, self.mass2("ALL"), self.mass1())])

    def grid(self, values) -> np.ndarray:
        """Reshape a tensor vector to ``(n2, n1)``."""
        return np.asarray(values).reshape(self.n2, self.n1)

    def evaluate(self, f) -> np.ndarray:
        """Nodal interpolant of ``f(y1, y2, y3)`` on the periodic dofs."""
        xy = self.cross.dof_coordinates()
        Y1 = np.repeat(xy[:, 0], self.n1)
        Y2 = np.repeat(xy[:, 1], self.n1)
        Y3 = np.tile(self.axial.nodes, self.n2)
        return np.asarray(f(Y1, Y2, Y3), dtype=complex) * np.ones(self.n)


class KronForm:
    """Sum of weighted tensor products ``w * (A2 kron A1)`` kept unassembled."""

    def __init__(self, terms):
        terms = [(float(w), sp.csr_matrix(A2), _dense1(A1)) for w, A2, A1 in terms]
        if not terms:
            raise ValueError("KronForm needs at least one term")
        self.n2 = terms[0][1].shape[0]
        self.n1 = terms[0][2].shape[0]
        for _, A2, A1 in terms:
            if A2.shape != (self.n2, self.n2) or A1.shape != (self.n1, self.n1):
                raise ValueError("inconsistent factor shapes")
        self.terms = terms
        self.shape = (self.n2 * self.n1,) * 2
        self.dtype = np.result_type(*(A2.dtype for _, A2, _ in terms),
                                    *(A1.dtype for _, _, A1 in terms))
        self._merged = _merge_terms(terms)

    def __add__(self, other: "KronForm") -> "KronForm":
        return KronForm(self.terms + other.terms)

    def scaled(self, c: float) -> "KronForm":
        return KronForm([(c * w, A2, A1) for w, A2, A1 in self.terms])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        single = x.ndim == 1
        X = x.reshape(self.n2, self.n1, -1)
        p = X.shape[2]
        out = None
        for A2, op1 in self._merged:
            T = op1(X)
            Y = A2 @ T.reshape(self.n2, -1)
            out = Y if out is None else out + Y
        out = out.reshape(-1, p)
        return out[:, 0] if single else out

    __matmul__ = matvec

    def diagonal(self) -> np.ndarray:
        d = np.zeros(self.shape[0], dtype=self.dtype)
        for w, A2, A1 in self.terms:
            d += w * np.kron(A2.diagonal(), np.diag(A1))
        return d

    def aslinearoperator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=self.matvec, matmat=self.matvec,
                              dtype=self.dtype)

    def to_sparse(self) -> sp.csr_matrix:
        """Assembled matrix; for tests and small problems only."""
        out = None
        for w, A2, A1 in self.terms:
            T = w * sp.kron(A2, sp.csr_matrix(A1), format="csr")
            out = T if out is None else out + T
        return out.tocsr()

    def restricted(self, X: np.ndarray) -> np.ndarray:
        """Galerkin projection ``X^H A X``."""
        return X.conj().T @ self.matvec(X)


def _merge_terms(terms):
    """One (sum of A2, axial operator) pair per distinct axial factor."""
    groups: dict[bytes, list] = {}
    for w, A2, A1 in terms:
        key = A1.tobytes() + str(A1.dtype).encode()
        if key in groups:
            groups[key][0] = groups[key][0] + w * A2
        else:
            groups[key] = [w * A2, A1]
    return [(sp.csr_matrix(A2), _axial_operator(A1)) for A2, A1 in groups.values()]


def _axial_operator(A1: np.ndarray):
    """Apply ``A1`` along axis 1 of an ``(n2, n1, p)`` block."""
    n1 = A1.shape[0]
    idx = np.arange(n1)
    band = np.zeros_like(A1, dtype=bool)
    band[idx, idx] = band[idx, (idx + 1) % n1] = band[idx, (idx - 1) % n1] = True
    if n1 >= 3 and not np.any(A1[~band]):
        d, up, lo = (np.ascontiguousarray(v, dtype=complex) for v in
                     (A1[idx, idx], A1[idx, (idx + 1) % n1], A1[idx, (idx - 1) % n1]))

        def apply(X):
            return periodic_tridiag_apply(d, up, lo, np.ascontiguousarray(X, dtype=complex))
        return apply

    def apply_dense(X):
        return np.einsum("ij,ajp->aip", A1, X, optimize=True)
    return apply_dense


def _dense1(A1) -> np.ndarray:
    return A1.toarray() if sp.issparse(A1) else np.asarray(A1)


def _check_params(eps, theta):
    if not 0.0 < eps < 1.0:
        raise ParameterError(f"epsilon={eps} not in (0, 1)")
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (3,) or np.any(theta < -np.pi) or np.any(theta >= np.pi):
        raise ParameterError(f"theta={theta} not in [-pi, pi)^3")
    return theta


def stiffness_parts(tm: TensorMesh, theta, profile: CoefficientProfile | None = None) -> dict:
    """The four tensor terms of the fibre problem at quasimomentum ``theta``."""
    profile = profile or tm.profile
    theta = np.asarray(theta, dtype=float)
    tp = theta[:2]
    M1 = tm.mass1()
    return {
        "matrix_xy": (bloch_stiffness_2d(tm.cross, tp, "MATRIX"), M1),
        "matrix_z": (tm.mass2("MATRIX"), bloch_stiffness_1d(tm.axial, theta[2], None)),
        "fibre_z": (tm.mass2("FIBRE"), bloch_stiffness_1d(tm.axial, theta[2], profile)),
        "fibre_xy": (bloch_stiffness_2d(tm.cross, tp, "FIBRE"), M1),
    }


def compose_pencil(eps: float, theta, tm: TensorMesh,
                   profile: CoefficientProfile | None = None) -> tuple[KronForm, KronForm]:
    """Stiffness ``K = eps^-2 a_theta + fibre in-plane part of b_theta`` and mass ``M``."""
    theta = _check_params(eps, theta)
    parts = stiffness_parts(tm, theta, profile)
    s = eps ** -2
    K = KronForm([
        (s, *parts["matrix_xy"]),
        (s, *parts["matrix_z"]),
        (s, *parts["fibre_z"]),
        (1.0, *parts["fibre_xy"]),
    ])
    return K, tm.mass()


def a_form(tm: TensorMesh, theta, profile=None) -> KronForm:
    """``a_theta`` alone (no epsilon scaling)."""
    parts = stiffness_parts(tm, theta, profile)
    return KronForm([(1.0, *parts[k]) for k in ("matrix_xy", "matrix_z", "fibre_z")])


def b_gradient_form(tm: TensorMesh, theta) -> KronForm:
    """Gradient part of ``b_theta``: ``int_F |(grad' + i theta') u|^2``."""
    K2 = bloch_stiffness_2d(tm.cross, np.asarray(theta, dtype=float)[:2], "FIBRE")
    return KronForm([(1.0, K2, tm.mass1())])


# --------------------------------------------------------------------------
# independent dense oracle

_TRI_QP = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_TRI_QW = np.full(3, 1.0 / 3.0)
_SEG_QP = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_SEG_QW = np.array([0.5, 0.5])


def dense_oracle_form(eps: float, theta, m2: PeriodicMesh2D, m1: PeriodicMesh1D,
                      profile: CoefficientProfile | None = None):
    """Dense (K, M) by direct quadrature over prism elements T x [y3_b, y3_b+l].

    No Kronecker factorisation is used: every prism integrates the full 3D
    integrand at a 3x2 tensor Gauss rule, exact for the P1 x P1 products.
    """
    theta = _check_params(eps, theta)
    profile = profile or m1.profile
    n2, n1 = m2.n_dofs, m1.n
    n = n2 * n1
    if n > DENSE_CAP:
        raise ParameterError(f"dense oracle refused: dimension {n} exceeds cap {DENSE_CAP}")
    K = np.zeros((n, n), dtype=complex)
    M = np.zeros((n, n), dtype=complex)
    s = eps ** -2
    lengths = m1.lengths
    for t, tri in enumerate(m2.triangles):
        P = m2.vertices[tri]
        J = np.array([P[1] - P[0], P[2] - P[0]]).T
        detJ = np.linalg.det(J)
        # gradients of barycentric coordinates
        G = np.linalg.solve(J.T, np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])).T  # (3, 2)
        fibre = m2.tags[t] == FIBRE
        gdofs = m2.dof[tri]
        for e in range(n1):
            z0 = m1.nodes[e]
            ell = lengths[e]
            coef = float(profile(z0 + 0.5 * ell))
            edofs = np.array([e, (e + 1) % n1])
            idx = (gdofs[:, None] * n1 + edofs[None, :]).ravel()   # (6,)
            Ke = np.zeros((6, 6), dtype=complex)
            Me = np.zeros((6, 6))
            for lam, wt in zip(_TRI_QP, _TRI_QW):
                for zeta, wz in zip(_SEG_QP, _SEG_QW):
                    w = wt * 0.5 * detJ * wz * ell
                    psi = np.array([1.0 - zeta, zeta])
                    dpsi = np.array([-1.0, 1.0]) / ell
                    val = np.outer(lam, psi).ravel()
                    gx = np.outer(G[:, 0], psi).ravel()
                    gy = np.outer(G[:, 1], psi).ravel()
                    gz = np.outer(lam, dpsi).ravel()
                    Dx = gx + 1j * theta[0] * val
                    Dy = gy + 1j * theta[1] * val
                    Dz = gz + 1j * theta[2] * val
                    # rows: test (conjugated), columns: trial
                    if fibre:
                        integrand = (s * coef * np.outer(Dz.conj(), Dz)
                                     + np.outer(Dx.conj(), Dx) + np.outer(Dy.conj(), Dy))
                    else:
                        integrand = s * (np.outer(Dx.conj(), Dx) + np.outer(Dy.conj(), Dy)
                                         + np.outer(Dz.conj(), Dz))
                    Ke += w * integrand
                    Me += w * np.outer(val, val)
            K[np.ix_(idx, idx)] += Ke
            M[np.ix_(idx, idx)] += Me
    return K, M
