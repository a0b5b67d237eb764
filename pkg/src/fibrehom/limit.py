"""The two-scale limit operator on ``Z0 + Z1`` (scalar plus Dirichlet disk field).

Unknowns are ordered ``[z0, z1 at interior disk nodes]``. With ``B`` the map
to nodal values on the disk submesh (first column all ones, then hats),

    MV = (1 - |B_h|) e0 e0^T + B^T M_B B
    S  = MV + (A^h xi . xi) e0 e0^T + a^h xi3^2 B^T M_B B + B^T K_B B

and the bands solve ``S z = (Lambda + 1) MV z``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh
from scipy.sparse.linalg import eigsh, splu

from fibrehom.assembly import _scatter, vertex_mass_2d
from fibrehom._ext.kernels import tri_bloch_entries
from fibrehom.bloch import Field, modulate
from fibrehom.cell import HomogenizedCoefficients
from fibrehom.eigensolve import DEFAULT_TOL, SpectralResult, cluster_groups
from fibrehom.mesh import DiskSubmesh, ParameterError


@dataclass
class LimitElement:
    """``z0`` and the nodal values of ``z1`` on every submesh vertex (zero on the rim)."""

    z0: complex
    z1: np.ndarray
    submesh: DiskSubmesh

    def on_cross_section(self) -> np.ndarray:
        """Vertex values of ``z0 + chi_B z1`` on the parent mesh."""
        out = np.full(self.submesh.parent.n_vertices, self.z0, dtype=complex)
        out[self.submesh.parent_vertex] += self.z1
        return out


def _disk_matrices(sub: DiskSubmesh):
    tri = np.ascontiguousarray(sub.triangles)
    K, M = tri_bloch_entries(sub.vertices, tri, 0.0, 0.0)
    rows, cols = np.repeat(tri, 3, axis=1), np.tile(tri, (1, 3))
    n = sub.n_vertices
    return _scatter(rows, cols, K.real, n).real, _scatter(rows, cols, M, n).real


def _basis(sub: DiskSubmesh) -> sp.csr_matrix:
    inner = sub.interior
    n = sub.n_vertices
    B = sp.lil_matrix((n, 1 + len(inner)))
    B[:, 0] = 1.0
    B[inner, 1 + np.arange(len(inner))] = 1.0
    return B.tocsr()


def _xi(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (3,) or not np.all(np.isfinite(xi)):
        raise ParameterError("xi must be a finite 3-vector")
    return xi


def assemble_limit_form(xi, hc: HomogenizedCoefficients, sub: DiskSubmesh):
    """Return ``(S, MV)`` as real symmetric sparse matrices."""
    xi = _xi(xi)
    Kb, Mb = _disk_matrices(sub)
    B = _basis(sub)
    BMB = (B.T @ Mb @ B).tocsr()
    BKB = (B.T @ Kb @ B).tocsr()
    n = B.shape[1]
    e0 = sp.csr_matrix(([1.0], ([0], [0])), shape=(n, n))
    MV = (1.0 - sub.area()) * e0 + BMB
    S = MV + float(xi @ hc.Ah @ xi) * e0 + hc.ah * xi[2] ** 2 * BMB + BKB
    return sp.csr_matrix(S), sp.csr_matrix(MV)


def _residuals(S, MV, vecs, mu):
    R = S @ vecs - (MV @ vecs) * mu
    return np.linalg.norm(R, axis=0) / np.linalg.norm(MV @ vecs, axis=0)


def limit_bands(xi, k: int, hc: HomogenizedCoefficients, sub: DiskSubmesh,
                tol: float = DEFAULT_TOL) -> SpectralResult:
    """Lowest ``k`` eigenvalues ``Lambda`` of the limit operator (clusters kept whole)."""
    S, MV = assemble_limit_form(xi, hc, sub)
    n = S.shape[0]
    want = min(k + 6, n)
    if n <= 400 or want >= n - 1:
        mu, vecs = eigh(S.toarray(), MV.toarray())
        mu, vecs = mu[:want], vecs[:, :want]
    else:
        # S >= MV > 0, so shift-invert about 0 targets the bottom of the spectrum
        mu, vecs = eigsh(S.tocsc(), k=want, M=MV.tocsc(), sigma=0.0, which="LM", tol=1e-13)
        order = np.argsort(mu)
        mu, vecs = mu[order], vecs[:, order]
    lam = mu - 1.0
    keep = k
    while keep < len(lam) and lam[keep] - lam[keep - 1] <= 10 * tol * max(1.0, abs(lam[keep])):
        keep += 1
    lam, vecs = lam[:keep], vecs[:, :keep]
    res = _residuals(S, MV, vecs, mu[:keep])
    return SpectralResult(lam, res, vecs, 0, cluster_groups(lam, tol))


def limit_rhs(field: Field, sub: DiskSubmesh, m1=None) -> np.ndarray:
    """``int (load) conj(z0~ + z1~)`` for every basis element.

    ``field`` lives on the unglued vertex set of the parent mesh; a second
    axis runs over axial nodes and is integrated against ``m1``.
    """
    V = np.asarray(field.values, dtype=complex)
    if V.ndim == 2:
        if m1 is None:
            raise ValueError("axial mass required for tensor fields")
        V = V @ np.asarray(m1 @ np.ones(m1.shape[0])).ravel()
    g = vertex_mass_2d(field.mesh) @ V
    rhs = np.empty(1 + len(sub.interior), dtype=complex)
    rhs[0] = g.sum()
    rhs[1:] = g[sub.parent_vertex[sub.interior]]
    return rhs


def solve_limit_resolvent(xi, field: Field, hc: HomogenizedCoefficients, sub: DiskSubmesh,
                          m1=None, theta_p=None) -> LimitElement:
    """Solve ``S z = rhs`` with the load modulated by ``exp(i theta'.y')``.

    ``theta_p`` defaults to zero (``field`` already modulated).
    """
    if theta_p is not None:
        field = modulate(theta_p, field, "forward")
    S, _ = assemble_limit_form(xi, hc, sub)
    rhs = limit_rhs(field, sub, m1)
    z = splu(S.tocsc().astype(complex)).solve(rhs)
    z1 = np.zeros(sub.n_vertices, dtype=complex)
    z1[sub.interior] = z[1:]
    return LimitElement(complex(z[0]), z1, sub)


# --------------------------------------------------------------------------
# independent radial check

def radial_oracle(xi3: float, r: float, hc: HomogenizedCoefficients, k: int,
                  n: int = 20000) -> np.ndarray:
    """Radially symmetric limit eigenvalues at ``xi = (0, 0, xi3)``.

    P1 elements in the radius with weight ``2 pi rho`` on ``n`` cells, the
    disk field vanishing at ``rho = r`` and ``z0`` as a bordered unknown.
    Uses the exact disk area ``pi r^2`` and ``Ah[2, 2]`` from ``hc``.
    """
    rho = np.linspace(0.0, r, n + 1)
    a, b = rho[:-1], rho[1:]
    L = b - a
    c = 2.0 * np.pi
    # local mass with linear weight, local stiffness with mean weight
    m11 = c * L * (3 * a + b) / 12
    m12 = c * L * (a + b) / 12
    m22 = c * L * (a + 3 * b) / 12
    kk = c * 0.5 * (a + b) / L
    idx = np.arange(n)
    rows = np.concatenate([idx, idx, idx + 1, idx + 1])
    cols = np.concatenate([idx, idx + 1, idx, idx + 1])
    Mw = sp.csr_matrix((np.concatenate([m11, m12, m12, m22]), (rows, cols)), shape=(n + 1, n + 1))
    Kw = sp.csr_matrix((np.concatenate([kk, -kk, -kk, kk]), (rows, cols)), shape=(n + 1, n + 1))
    load = np.asarray(Mw.sum(axis=1)).ravel()[:n]        # int phi_j
    Mw, Kw = Mw[:n][:, :n], Kw[:n][:, :n]               # drop the rim node
    area = np.pi * r ** 2
    BMB = sp.bmat([[sp.csr_matrix([[area]]), sp.csr_matrix(load[None, :])],
                   [sp.csr_matrix(load[:, None]), Mw]], format="csc")
    e0 = sp.csc_matrix(([1.0], ([0], [0])), shape=(n + 1, n + 1))
    BKB = sp.bmat([[sp.csr_matrix((1, 1)), None], [None, Kw]], format="csc")
    MV = (1.0 - area) * e0 + BMB
    S = MV + hc.Ah[2, 2] * xi3 ** 2 * e0 + hc.ah * xi3 ** 2 * BMB + BKB
    mu = eigsh(S, k=k, M=MV, sigma=0.0, which="LM", tol=1e-14, return_eigenvectors=False)
    return np.sort(mu) - 1.0
