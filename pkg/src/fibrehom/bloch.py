"""The fibre problem at fixed (eps, theta): bands, resolvent, modulation, gaps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from fibrehom.assembly import (KronForm, TensorMesh, a_form, bloch_stiffness_1d,
                               bloch_stiffness_2d, compose_pencil, stiffness_parts,
                               vertex_mass_2d)
from fibrehom.eigensolve import (DEFAULT_TOL, KronPreconditioner, SpectralResult,
                                 cluster_groups, jacobi, m_orthogonal_projector, pcg, smallest_eigs)
from fibrehom.mesh import FIBRE, ParameterError, PeriodicMesh2D


def _mean_coefficient(tm: TensorMesh) -> float:
    v = np.asarray(tm.profile.values)
    return float(np.sqrt(v.min() * v.max()))


def kron_preconditioner(tm: TensorMesh, theta, scale: float, shift: float = 1.0,
                        fibre_xy: float = 1.0) -> KronPreconditioner:
    """Preconditioner for ``scale * a_theta + fibre_xy * (fibre grad') + shift * mass``.

    The axial coefficient inside the fibre is frozen at the geometric mean of
    its values, which makes this spectrally equivalent to the true operator
    with constant ``sqrt(max a / min a)``.
    """
    theta = np.asarray(theta, dtype=float)
    tp = theta[:2]
    X2 = (scale * bloch_stiffness_2d(tm.cross, tp, "MATRIX")
          + fibre_xy * bloch_stiffness_2d(tm.cross, tp, "FIBRE")
          + shift * tm.mass2("ALL"))
    Y2 = scale * (tm.mass2("MATRIX") + _mean_coefficient(tm) * tm.mass2("FIBRE"))
    K1 = bloch_stiffness_1d(tm.axial, theta[2], None)
    return KronPreconditioner(X2, Y2, K1, tm.mass1(), mu_floor=shift / scale)


def _preconditioner(kind, tm, theta, K, M, scale, shift=1.0, fibre_xy=1.0):
    if kind in (None, "none"):
        return None
    if kind == "jacobi":
        return jacobi(K, M, shift)
    if kind == "kron":
        return kron_preconditioner(tm, theta, scale, shift, fibre_xy)
    raise ValueError(f"unknown preconditioner {kind!r}")


def epsilon_bands(eps: float, theta, k: int, tm: TensorMesh, tol: float = DEFAULT_TOL,
                  precond: str = "kron", seed: int = 0, maxiter: int = 2000,
                  X0=None) -> SpectralResult:
    """Lowest ``k`` eigenvalues of the fibre operator (pencil K, M; no identity shift).

    ``X0`` is an optional starting block, e.g. eigenvectors from a nearby ``eps``.
    """
    theta = np.asarray(theta, dtype=float)
    K, M = compose_pencil(eps, theta, tm)
    pre = _preconditioner(precond, tm, theta, K, M, eps ** -2)
    if np.any(theta != 0.0):
        return smallest_eigs(K, M, k, tol, precond=pre, seed=seed, maxiter=maxiter, X0=X0)
    # constants span the kernel at theta = 0; deflate and prepend them
    one = np.ones(tm.n, dtype=complex)
    one /= np.sqrt(np.real(one.conj() @ (M @ one)))
    res = smallest_eigs(K, M, max(k - 1, 1), tol, precond=pre, seed=seed, maxiter=maxiter,
                        project=m_orthogonal_projector(one, M), X0=X0)
    lam = np.concatenate([[0.0], res.eigenvalues])
    vec = np.hstack([one[:, None], res.vectors])
    resid = np.concatenate([[np.linalg.norm(K @ one) / np.linalg.norm(M @ one)], res.residuals])
    keep = max(k, len(res.eigenvalues) + 1) if k > 1 else 1
    return SpectralResult(lam[:keep], resid[:keep], vec[:, :keep], res.iterations,
                          cluster_groups(lam[:keep], tol))


def solve_epsilon_resolvent(eps: float, theta, f: np.ndarray, tm: TensorMesh,
                            tol: float = 1e-10, precond: str = "kron") -> np.ndarray:
    """Solve ``(K + M) u = M f`` for the nodal field ``u``."""
    theta = np.asarray(theta, dtype=float)
    K, M = compose_pencil(eps, theta, tm)
    A = K + M
    pre = _preconditioner(precond, tm, theta, K, M, eps ** -2)
    b = M @ np.asarray(f, dtype=complex)
    u, _, _ = pcg(A, b, pre, tol=tol)
    return u


# --------------------------------------------------------------------------
# modulation exp(i theta'.y')

@dataclass
class Field:
    """Nodal values on the unglued vertex set of a cross-section mesh.

    ``values`` has shape ``(n_vertices,)`` or ``(n_vertices, n1)``; the second
    axis, when present, runs over axial nodes.
    """

    values: np.ndarray
    mesh: PeriodicMesh2D

    @classmethod
    def from_dofs(cls, tm: TensorMesh, u) -> "Field":
        return cls(tm.cross.expand(tm.grid(u)), tm.cross)

    def l2_norm(self, m1=None) -> float:
        Mv = vertex_mass_2d(self.mesh)
        V = self.values
        if V.ndim == 1:
            return float(np.sqrt(np.real(V.conj() @ (Mv @ V))))
        W = Mv @ V
        if m1 is None:
            raise ValueError("axial mass required for tensor fields")
        return float(np.sqrt(np.real(np.sum(V.conj() * (W @ np.asarray(m1.todense()).T)))))


def modulate(theta_p, field: Field, direction: str = "forward") -> Field:
    """Multiply nodal values by ``exp(+-i theta'.y')`` (forward: +, adjoint: -)."""
    sign = {"forward": 1.0, "adjoint": -1.0}[direction]
    tp = np.asarray(theta_p, dtype=float)
    phase = np.exp(sign * 1j * (field.mesh.vertices @ tp))
    vals = field.values * (phase[:, None] if field.values.ndim == 2 else phase)
    return Field(vals, field.mesh)


# --------------------------------------------------------------------------
# the degenerate subspace V and its complement W

class SubspaceBasis:
    """Discrete ``V``: constants plus y3-constant fibre-interior hats.

    Each basis vector is ``u2 kron ones``. Since the axial stiffness kills
    constants at ``theta3 = 0``, ``G0 (B2 kron 1) = (G2 B2) kron (M1 1)`` with
    ``G2`` the cross-section part of ``a_0 + b_0``. The complement ``W`` is
    therefore the set of ``w`` whose axial mean is orthogonal to ``G2 B2``;
    ``project`` maps onto it along ``U2 kron 1`` (``U2 = M2^-1 G2 B2``), which
    makes the projector self-adjoint in the ``c`` inner product.
    """

    def __init__(self, tm: TensorMesh):
        self.tm = tm
        m = tm.cross
        fib_nodes = np.unique(m.dof[m.triangles[m.tags == FIBRE]])
        iface = np.unique(m.dof[m.interface_nodes])
        self.interior = np.setdiff1d(fib_nodes, iface)
        n2, nI = tm.n2, len(self.interior)
        B2 = sp.lil_matrix((n2, 1 + nI))
        B2[:, 0] = 1.0
        B2[self.interior, 1 + np.arange(nI)] = 1.0
        self.B2 = B2.tocsr()
        self.dim = 1 + nI
        parts = stiffness_parts(tm, np.zeros(3))
        terms = [parts[k] for k in ("matrix_xy", "matrix_z", "fibre_z", "fibre_xy")]
        terms.append((tm.mass2("ALL"), tm.mass1()))
        self.G0 = KronForm([(1.0, A2, A1) for A2, A1 in terms])
        M2 = tm.mass2("ALL")
        G2 = (parts["matrix_xy"][0] + parts["fibre_xy"][0] + M2).real
        self.Y2 = np.asarray((G2 @ self.B2).todense())
        self.U2 = spla.splu(sp.csc_matrix(M2.real)).solve(self.Y2)
        self.w1 = np.asarray(tm.mass1() @ np.ones(tm.n1)).ravel().real
        total = self.w1.sum()
        # Gram of U2 kron 1 in c; also B^H G0 B since U2^H M2 B2 = Y2^H B2 / ...
        self._S_inv = np.linalg.inv(self.U2.T @ self.Y2 * total)
        self.gram = np.real((self.B2.T @ self.Y2) * total)

    def lift(self, coeffs) -> np.ndarray:
        """Basis combination(s) as tensor vectors."""
        c = np.asarray(coeffs)
        u2 = self.B2 @ c
        if c.ndim == 1:
            return np.repeat(u2, self.tm.n1)
        return np.repeat(u2, self.tm.n1, axis=0)

    def g0_with_basis(self, X) -> np.ndarray:
        """``B^H G0 X`` for a block ``X``."""
        X3 = np.asarray(X).reshape(self.tm.n2, self.tm.n1, -1)
        return self.Y2.T @ np.einsum("ajp,j->ap", X3, self.w1)

    def _blocks(self, X):
        X = np.asarray(X)
        single = X.ndim == 1
        return (X[:, None] if single else X), single

    def project(self, X) -> np.ndarray:
        """Onto ``W`` along ``U2 kron 1``."""
        X2, single = self._blocks(X)
        X3 = X2.reshape(self.tm.n2, self.tm.n1, -1)
        c = self._S_inv @ (self.Y2.T @ np.einsum("ajp,j->ap", X3, self.w1))
        out = (X3 - (self.U2 @ c)[:, None, :]).reshape(X2.shape)
        return out[:, 0] if single else out

    def project_dual(self, R) -> np.ndarray:
        """Adjoint of ``project``: removes the ``c (U2 kron 1)`` components of a residual."""
        R2, single = self._blocks(R)
        R3 = R2.reshape(self.tm.n2, self.tm.n1, -1)
        c = self._S_inv @ (self.U2.T @ R3.sum(axis=1))
        out = (R3 - np.einsum("ap,j->ajp", self.Y2 @ c, self.w1)).reshape(R2.shape)
        return out[:, 0] if single else out

    def fibre_kernel_projector(self) -> "_ObliqueProjector":
        """c-orthogonal projector removing y3-constant fields on the fibre interior."""
        tm = self.tm
        Bi = self.B2[:, 1:]
        Y2 = np.asarray((tm.mass2("ALL").real @ Bi).todense())
        return _ObliqueProjector(Bi.toarray().astype(complex), Y2, self.w1, tm.n2, tm.n1)

    def energy_projector(self, theta) -> "_ObliqueProjector":
        """Projector onto ``W`` along ``Z2 kron 1`` with ``Z2 ~ (a_theta + c)^-1`` of the constraint.

        Preconditioned directions carry large components along the near-kernel
        of ``a_theta + c``, which is close to ``V``; projecting along that
        near-kernel rather than c-orthogonally keeps them out of ``W``. At
        ``theta3 = 0`` the direction is exact, otherwise the axial terms are
        approximated by ``theta3^2`` times a mass.
        """
        theta = np.asarray(theta, dtype=float)
        tm = self.tm
        L2 = bloch_stiffness_2d(tm.cross, theta[:2], "MATRIX") + tm.mass2("ALL")
        if theta[2] != 0.0:
            L2 = L2 + theta[2] ** 2 * (tm.mass2("MATRIX") + _mean_coefficient(tm) * tm.mass2("FIBRE"))
        Z2 = spla.splu(sp.csc_matrix(L2, dtype=complex)).solve(self.Y2.astype(complex))
        return _ObliqueProjector(Z2, self.Y2, self.w1, tm.n2, tm.n1)


class _ObliqueProjector:
    """``I - (Z2 kron 1) (Y^H (Z2 kron 1))^-1 Y^H`` with ``Y = Y2 kron w1``, and its adjoint."""

    def __init__(self, Z2, Y2, w1, n2, n1):
        self.Z2, self.Y2, self.w1, self.shape = Z2, Y2, w1, (n2, n1)
        self._G_inv = np.linalg.inv(Y2.T @ Z2 * w1.sum())

    def project(self, X) -> np.ndarray:
        X = np.asarray(X)
        X3 = X.reshape(*self.shape, -1)
        c = self._G_inv @ (self.Y2.T @ np.einsum("ajp,j->ap", X3, self.w1))
        return (X3 - (self.Z2 @ c)[:, None, :]).reshape(X.shape)

    def project_dual(self, R) -> np.ndarray:
        R = np.asarray(R)
        R3 = R.reshape(*self.shape, -1)
        c = self._G_inv.conj().T @ (self.Z2.conj().T @ R3.sum(axis=1))
        return (R3 - np.einsum("ap,j->ajp", self.Y2 @ c, self.w1)).reshape(R.shape)


# Residual tolerance for the gap pencils. Their roundoff floor sits near 1e-8
# on graded meshes; 1e-6 already pins the eigenvalue to ~1e-12.
GAP_TOL = 1e-6


def coercivity_gap(theta, tm: TensorMesh, basis: SubspaceBasis | None = None,
                   tol: float = GAP_TOL, seed: int = 0) -> float:
    """Smallest eigenvalue of ``a_theta`` against ``c`` on the discrete ``W``."""
    theta = np.asarray(theta, dtype=float)
    basis = basis or SubspaceBasis(tm)
    A = a_form(tm, theta)
    C = tm.mass()
    pre = kron_preconditioner(tm, theta, 1.0, shift=1.0, fibre_xy=0.0)
    proj = basis.energy_projector(theta)
    res = smallest_eigs(A, C, 1, tol, precond=pre, project=proj.project,
                        project_dual=proj.project_dual, seed=seed, extra=3)
    return float(res.eigenvalues[0])


def directional_gap(theta, tm: TensorMesh, tol: float = GAP_TOL, seed: int = 0,
                    basis: SubspaceBasis | None = None) -> float:
    """Smallest eigenvalue of ``a_theta`` against ``|t3|^2 c[chi0 u] + |t|^2 c[chi1 u]``.

    At ``theta3 = 0`` both forms vanish on y3-constant fields inside the fibre
    and the weight also vanishes on the rest of the fibre. There the inverted
    pencil ``(-d, a + d)`` is solved on a complement of the common kernel; its
    lowest eigenvalue is ``-1 / (1 + gamma*)``.
    """
    theta = np.asarray(theta, dtype=float)
    if not np.any(theta):
        raise ParameterError("directional gap undefined at theta = 0")
    A = a_form(tm, theta)
    t2 = float(theta @ theta)
    D = KronForm([(theta[2] ** 2, tm.mass2("FIBRE"), tm.mass1()),
                  (t2, tm.mass2("MATRIX"), tm.mass1())])
    pre = kron_preconditioner(tm, theta, 1.0, shift=t2, fibre_xy=0.0)
    if theta[2] != 0.0:
        return float(smallest_eigs(A, D, 1, tol, precond=pre, seed=seed).eigenvalues[0])
    basis = basis or SubspaceBasis(tm)
    proj = basis.fibre_kernel_projector()
    res = smallest_eigs(D.scaled(-1.0), A + D, 1, tol, precond=pre, project=proj.project,
                        project_dual=proj.project_dual, seed=seed, extra=3)
    nu = -float(res.eigenvalues[0])
    return 1.0 / nu - 1.0
