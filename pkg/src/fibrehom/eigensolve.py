"""Smallest eigenpairs of Hermitian pencils ``K v = lam M v``.

``smallest_eigs`` is a locally optimal block preconditioned conjugate gradient
(LOBPCG) iteration. The Rayleigh-Ritz step orthonormalises the trial basis
through an eigen-decomposition of its Gram matrix and drops near-dependent
directions, which keeps it stable when the pencil is badly scaled (the fibre
problem carries an ``eps^-2`` weight).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg.blas import zgemm

from fibrehom.assembly import DENSE_CAP
from fibrehom.mesh import ParameterError

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAXITER = 2000
# LOBPCG: iterations between explicit recomputation of K X, M X, and
# iterations without halving the worst residual before giving up
REFRESH = 10
STALL = 100


class NonConvergenceError(RuntimeError):
    def __init__(self, message, residuals=None, eigenvalues=None):
        super().__init__(message)
        self.residuals = residuals
        self.eigenvalues = eigenvalues


@dataclass
class SpectralResult:
    eigenvalues: np.ndarray
    residuals: np.ndarray
    vectors: np.ndarray
    iterations: int = 0
    clusters: list = field(default_factory=list)

    def __len__(self):
        return len(self.eigenvalues)


def _apply(A, X):
    if callable(A) and not hasattr(A, "shape"):
        return A(X)
    return A @ X


def _dense(A) -> np.ndarray:
    if sp.issparse(A):
        return A.toarray()
    if hasattr(A, "to_sparse"):
        return A.to_sparse().toarray()
    return np.asarray(A)


def residual_norms(K, M, X, lam) -> np.ndarray:
    """``||K x - lam M x|| / ||M x||`` per column (eigenvalue units)."""
    KX = _apply(K, X)
    MX = _apply(M, X)
    R = KX - MX * lam[None, :]
    return np.linalg.norm(R, axis=0) / np.linalg.norm(MX, axis=0)


def cluster_groups(lam, tol) -> list[list[int]]:
    """Index groups of numerically coincident eigenvalues."""
    groups = [[0]] if len(lam) else []
    for i in range(1, len(lam)):
        if lam[i] - lam[i - 1] <= 10 * tol * max(1.0, abs(lam[i])):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def dense_eigs(K, M) -> SpectralResult:
    Kd, Md = _dense(K), _dense(M)
    n = Kd.shape[0]
    if n > DENSE_CAP:
        raise ParameterError(f"dense eigensolve refused: dimension {n} exceeds cap {DENSE_CAP}")
    Kd = 0.5 * (Kd + Kd.conj().T)
    Md = 0.5 * (Md + Md.conj().T)
    lam, V = sla.eigh(Kd, Md)
    res = residual_norms(Kd, Md, V, lam)
    return SpectralResult(lam, res, V, 0, cluster_groups(lam, 1e-12))


# --------------------------------------------------------------------------
# preconditioners

def jacobi(K, M, shift: float = 1.0):
    """Inverse diagonal of ``K + shift M``."""
    d = np.real(np.asarray(K.diagonal()) + shift * np.asarray(M.diagonal()))
    inv = 1.0 / d

    def apply(R):
        return R * (inv[:, None] if R.ndim == 2 else inv)

    return apply


class KronPreconditioner:
    """Approximate inverse of ``X2 kron M1 + Y2 kron K1``.

    The axial pencil ``(K1, M1)`` is diagonalised once; each axial mode then
    needs a cross-section solve with ``X2 + mu Y2``. Modes whose ``mu`` fall
    in the same factor-``ratio`` bin share one sparse LU, so the result is
    exact up to a spectral factor of ``sqrt(ratio)``.
    """

    def __init__(self, X2, Y2, K1, M1, mu_floor: float = 0.0, ratio: float = 1.3):
        K1 = _dense(K1)
        M1 = _dense(M1)
        mu, Q = sla.eigh(0.5 * (K1 + K1.conj().T), 0.5 * (M1 + M1.conj().T))
        mu = np.maximum(mu, 0.0)
        self.Q = Q
        self.Qc = Q.conj()
        self.n1 = Q.shape[0]
        self.n2 = X2.shape[0]
        X2 = sp.csc_matrix(X2)
        Y2 = sp.csc_matrix(Y2)
        self.real = not (np.iscomplexobj(X2.data) and np.any(X2.data.imag)) and \
            not (np.iscomplexobj(Y2.data) and np.any(Y2.data.imag))
        if self.real:
            X2, Y2 = X2.real, Y2.real
        floor = max(mu_floor, 1e-300)
        nu = mu + floor
        logs = np.log(nu) / np.log(ratio)
        bins = np.floor(logs - logs.min() + 1e-9).astype(int)
        self.groups = []
        for b in np.unique(bins):
            modes = np.flatnonzero(bins == b)
            rep = max(float(np.exp(np.mean(np.log(nu[modes])))) - floor, float(mu[modes].min()))
            A = (X2 + rep * Y2).tocsc()
            self.groups.append((modes, spla.splu(A, permc_spec="MMD_AT_PLUS_A")))

    @property
    def n_factorisations(self) -> int:
        return len(self.groups)

    def _solve(self, lu, rhs):
        if not self.real:
            return lu.solve(rhs)
        both = lu.solve(np.hstack([rhs.real, rhs.imag]))
        k = rhs.shape[1]
        return both[:, :k] + 1j * both[:, k:]

    def __call__(self, R):
        single = R.ndim == 1
        R3 = R.reshape(self.n2, self.n1, -1)
        p = R3.shape[2]
        # axial transform: Bh[a, k, q] = sum_j R[a, j, q] conj(Q[j, k])
        Rt = np.ascontiguousarray(R3.transpose(0, 2, 1)).reshape(-1, self.n1)
        Bh = (Rt @ self.Qc).reshape(self.n2, p, self.n1)
        U = np.empty((self.n2, p, self.n1), dtype=complex)
        for modes, lu in self.groups:
            rhs = np.ascontiguousarray(Bh[:, :, modes]).reshape(self.n2, -1)
            U[:, :, modes] = self._solve(lu, rhs.astype(complex, copy=False)).reshape(
                self.n2, p, len(modes))
        out = (U.reshape(-1, self.n1) @ self.Q.T).reshape(self.n2, p, self.n1)
        out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(-1, p)
        return out[:, 0] if single else out


def m_orthogonal_projector(Y, M):
    """``X -> X - Y (Y^H M Y)^-1 Y^H M X``: removes the span of ``Y``."""
    Y = np.atleast_2d(np.asarray(Y).T).T
    MY = _apply(M, Y)
    G = Y.conj().T @ MY
    Ginv = np.linalg.inv(G)

    def project(X):
        return X - Y @ (Ginv @ (MY.conj().T @ X))

    return project


# --------------------------------------------------------------------------
# LOBPCG

def _orthonormal_basis(S, MS, drop: float = 1e-12):
    """Coefficients ``T`` with ``(ST)^H M (ST) = I``, dropping dependent directions."""
    return _orthonormal_from_gram(S.conj().T @ MS, drop)


def _inner(A, B) -> np.ndarray:
    """``A^H B`` for C-ordered complex blocks without a conjugated copy of ``A``."""
    if A.dtype == np.complex128 and B.dtype == np.complex128 and A.flags.c_contiguous \
            and B.flags.c_contiguous:
        # C-ordered (n, m) is Fortran-ordered (m, n): (A^H B)^T = B^T conj(A)
        return zgemm(1.0, B.T, A.T, trans_b=2).T
    return A.conj().T @ B


def _block_grams(blocks):
    """``S^H K S`` and ``S^H M S`` for ``S = [X, W, P]`` built block by block.

    Only the upper blocks are computed; the rest are mirrored.
    """
    nb = len(blocks)
    GK = [[None] * nb for _ in range(nb)]
    GM = [[None] * nb for _ in range(nb)]
    for i in range(nb):
        for j in range(i, nb):
            GK[i][j] = _inner(blocks[i][0], blocks[j][1])
            GM[i][j] = _inner(blocks[i][0], blocks[j][2])
            GK[j][i] = GK[i][j].conj().T
            GM[j][i] = GM[i][j].conj().T
    return np.block(GK), np.block(GM)


def _orthonormal_from_gram(G, drop: float = 1e-9):
    G = 0.5 * (G + G.conj().T)
    scale = np.sqrt(np.abs(np.real(np.diag(G))))
    scale[scale == 0] = 1.0
    d, V = np.linalg.eigh(G / np.outer(scale, scale))
    keep = d > drop * d.max()
    return (V[:, keep] / np.sqrt(d[keep])) / scale[:, None]


def _rayleigh_ritz(K, M, X):
    """Ritz vectors of ``(K, M)`` on ``span(X)`` with freshly applied images."""
    KX, MX = _apply(K, X), _apply(M, X)
    T = _orthonormal_basis(X, MX)
    X, KX, MX = X @ T, KX @ T, MX @ T
    G = _inner(X, KX)
    lam, C = sla.eigh(0.5 * (G + G.conj().T))
    return X @ C, KX @ C, MX @ C, lam


def smallest_eigs(K, M, k: int, tol: float = DEFAULT_TOL, precond=None, X0=None,
                  project=None, project_dual=None, maxiter: int = DEFAULT_MAXITER,
                  seed: int = 0, extra: int = 5, extend_clusters: bool = True) -> SpectralResult:
    """The ``k`` smallest eigenpairs of the Hermitian pencil ``(K, M)``.

    ``precond`` maps residual blocks to search directions (``None`` means
    identity). ``project`` maps blocks onto the admissible subspace, e.g. an
    M-orthogonal deflation of a known kernel; it is applied to the initial
    block and to every new search direction; ``project_dual`` is its adjoint,
    applied to residuals (needed when ``project`` is not M-orthogonal, since
    the restricted residual then lives in a quotient space). A degenerate
    cluster straddling
    index ``k`` is returned whole.
    """
    if k < 1:
        raise ParameterError("k must be >= 1")
    n = K.shape[0]
    m = min(k + extra, n)
    if n <= max(4 * m, 60):
        return _small_problem(K, M, k, tol, project, extend_clusters)
    precond = precond or (lambda R: R)
    project = project or (lambda X: X)
    project_dual = project_dual or (lambda R: R)
    rng = np.random.default_rng(seed)
    if X0 is None:
        X = rng.standard_normal((n, m)) + 1j * rng.standard_normal((n, m))
    else:
        X = np.asarray(X0, dtype=complex)
        if X.shape[1] < m:
            pad = rng.standard_normal((n, m - X.shape[1])) + 1j * rng.standard_normal((n, m - X.shape[1]))
            X = np.hstack([X, pad])
        X = X[:, :m]
    before = np.linalg.norm(X, axis=0)
    X = project(X)
    # columns (nearly) inside the removed subspace would only return round-off
    lost = np.linalg.norm(X, axis=0) <= 1e-6 * before
    if lost.any():
        fresh = rng.standard_normal((n, int(lost.sum()))) + 1j * rng.standard_normal((n, int(lost.sum())))
        X[:, lost] = project(fresh)

    X, KX, MX, lam = _rayleigh_ritz(K, M, X)
    m = X.shape[1]
    P = KP = MP = None
    need = min(k, m)
    res = np.full(m, np.inf)
    it = 0
    best, since = np.inf, 0
    for it in range(1, maxiter + 1):
        if it % REFRESH == 0:
            # the implicitly updated images drift from K X, M X by round-off
            # that grows with ||K||; recompute them and re-orthonormalise X
            X, KX, MX, lam = _rayleigh_ritz(K, M, X)
            m = X.shape[1]
            if P is not None:
                KP, MP = _apply(K, P), _apply(M, P)
        R = project_dual(KX - MX * lam[None, :])
        res = np.linalg.norm(R, axis=0) / np.linalg.norm(MX, axis=0)
        thresh = tol * np.maximum(1.0, np.abs(lam))
        conv = res <= thresh
        log.debug("iteration %d: lambda %s residual %s", it, lam[:k], res[:k])
        worst = float(np.max(res[:need] / thresh[:need]))
        if worst < 0.5 * best:
            best, since = worst, 0
        else:
            since += 1
        if since > STALL:
            raise NonConvergenceError(
                f"LOBPCG stagnated after {it} iterations; residuals {res[:need]} "
                f"(best {best:.3g} x tolerance)", residuals=res[:need], eigenvalues=lam[:need])
        if extend_clusters:
            need = min(_extend(lam, k, tol), m)
        if conv[:need].all():
            if need < m - 1 or not extend_clusters:
                break
            # cluster reaches the block edge: enlarge the block and continue
            log.debug("enlarging block from %d", m)
            return smallest_eigs(K, M, k, tol, precond, X, project, project_dual, maxiter - it,
                                 seed, extra + 5, extend_clusters)
        active = ~conv
        W = project(precond(R[:, active]))
        del R
        # orthogonalising the new directions keeps the Ritz Gram well
        # conditioned once residuals get small
        for _ in range(2):
            W -= X @ _inner(MX, W)
        KW, MW = _apply(K, W), _apply(M, W)
        T = _orthonormal_from_gram(_inner(W, MW))
        W, KW, MW = W @ T, KW @ T, MW @ T
        blocks = [(X, KX, MX), (W, KW, MW)]
        if P is not None:
            for _ in range(2):
                C = _inner(MX, P)
                D = _inner(MW, P)
                P, KP, MP = (P - X @ C - W @ D, KP - KX @ C - KW @ D, MP - MX @ C - MW @ D)
            T = _orthonormal_from_gram(_inner(P, MP))
            if T.shape[1]:
                blocks.append((P @ T, KP @ T, MP @ T))
        GK, GM = _block_grams(blocks)
        Tb = _orthonormal_from_gram(GM)
        A = Tb.conj().T @ GK @ Tb
        A = 0.5 * (A + A.conj().T)
        theta, Y = np.linalg.eigh(A)
        Cc = Tb @ Y[:, :m]
        offs = np.cumsum([0] + [b[0].shape[1] for b in blocks])
        parts = [Cc[offs[i]:offs[i + 1]] for i in range(len(blocks))]
        # the new direction is the part of the update outside span(X)
        new_x, new_p = [], []
        for j in range(3):
            d = sum(b[j] @ c for b, c in zip(blocks[1:], parts[1:]))
            x = blocks[0][j] @ parts[0]
            x += d
            new_x.append(x)
            new_p.append(np.ascontiguousarray(d[:, active]))
            del d
        del blocks, W, KW, MW
        X, KX, MX = new_x
        P, KP, MP = new_p
        lam = theta[:m]
    else:
        raise NonConvergenceError(
            f"LOBPCG did not converge in {maxiter} iterations; residuals {res[:need]}",
            residuals=res[:need], eigenvalues=lam[:need])
    lam = lam[:need]
    X = X[:, :need]
    return SpectralResult(lam, res[:need], X, it, cluster_groups(lam, tol))


def _small_problem(K, M, k, tol, project, extend_clusters):
    Kd, Md = _dense(K), _dense(M)
    if project is None:
        res = dense_eigs(Kd, Md)
        lam, V = res.eigenvalues, res.vectors
    else:
        Z = project(np.eye(Kd.shape[0], dtype=complex))
        T = _orthonormal_basis(Z, Md @ Z, drop=1e-10)
        Z = Z @ T
        lam, C = sla.eigh(0.5 * (Z.conj().T @ Kd @ Z + (Z.conj().T @ Kd @ Z).conj().T))
        V = Z @ C
    kk = _extend(lam, k, tol) if extend_clusters else k
    kk = min(kk, len(lam))
    return SpectralResult(lam[:kk], residual_norms(Kd, Md, V[:, :kk], lam[:kk]), V[:, :kk],
                          0, cluster_groups(lam[:kk], tol))


def _extend(lam, k, tol) -> int:
    """Smallest ``kk >= k`` such that ``lam[kk] - lam[kk-1]`` is a real gap."""
    kk = k
    while kk < len(lam) and lam[kk] - lam[kk - 1] <= 10 * tol * max(1.0, abs(lam[kk])):
        kk += 1
    return kk


# --------------------------------------------------------------------------
# linear solves

def pcg(A, b, precond=None, tol: float = 1e-10, maxiter: int = 5000, x0=None):
    """Preconditioned CG for Hermitian positive definite ``A``; relative residual ``tol``."""
    n = A.shape[0]
    op = spla.LinearOperator((n, n), matvec=lambda x: _apply(A, x), dtype=complex)
    pre = None
    if precond is not None:
        pre = spla.LinearOperator((n, n), matvec=precond, dtype=complex)
    it = [0]

    def count(_):
        it[0] += 1

    x, info = spla.cg(op, b.astype(complex), x0=x0, rtol=tol, atol=0.0, maxiter=maxiter,
                      M=pre, callback=count)
    rel = np.linalg.norm(_apply(A, x) - b) / max(np.linalg.norm(b), 1e-300)
    if info != 0 and rel > tol:
        raise NonConvergenceError(f"CG stopped after {it[0]} iterations at relative residual {rel:.3e}",
                                  residuals=np.array([rel]))
    return x, rel, it[0]
