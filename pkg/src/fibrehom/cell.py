"""Perforated cross-section cell problems and the homogenised coefficients."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from fibrehom.assembly import bloch_stiffness_2d, mass_2d, triangle_geometry
from fibrehom.mesh import CoefficientProfile, PeriodicMesh2D


class CellProblemError(RuntimeError):
    pass


@dataclass
class CellSolution:
    """Discrete corrector ``N_alpha`` on the periodic dofs of the matrix region.

    ``values`` is indexed by periodic dof; entries at dofs not touched by a
    matrix triangle are zero and carry no meaning.
    """

    values: np.ndarray
    alpha: int
    mesh: PeriodicMesh2D
    residual: float

    def vertex_values(self) -> np.ndarray:
        return self.mesh.expand(self.values)


def _matrix_dofs(m: PeriodicMesh2D) -> np.ndarray:
    return np.unique(m.dof[m.triangles[m.region_mask("MATRIX")]])


def solve_cell_problem(m: PeriodicMesh2D, alpha: int) -> CellSolution:
    """``int (grad' N + e_alpha) . grad' phi = 0`` on the matrix, mean zero."""
    if alpha not in (1, 2):
        raise ValueError("alpha must be 1 or 2")
    mask = m.region_mask("MATRIX")
    tri = m.triangles[mask]
    area, grad = triangle_geometry(m.vertices, tri)
    K = bloch_stiffness_2d(m, (0.0, 0.0), "MATRIX").real
    load = np.zeros(m.n_dofs)
    np.add.at(load, m.dof[tri], -area[:, None] * grad[:, :, alpha - 1])
    weights = np.asarray(mass_2d(m, "MATRIX").sum(axis=0)).ravel()

    act = _matrix_dofs(m)
    Ka = K[act][:, act]
    w = weights[act]
    n = len(act)
    # bordered system: one multiplier row enforces int N = 0
    A = sp.bmat([[Ka, sp.csr_matrix(w[:, None])], [sp.csr_matrix(w[None, :]), None]], format="csc")
    rhs = np.concatenate([load[act], [0.0]])
    sol = spsolve(A, rhs)
    if not np.all(np.isfinite(sol)):
        raise CellProblemError("cell system is singular")
    N = np.zeros(m.n_dofs)
    N[act] = sol[:n]
    resid = float(np.abs(Ka @ sol[:n] - load[act]).max(initial=0.0))
    return CellSolution(N, alpha, m, resid)


def homogenized_matrix(m: PeriodicMesh2D, correctors=None) -> np.ndarray:
    """The 3x3 perforated-fibre matrix; ``Ah[2, 2]`` uses the polygonal disk area."""
    if correctors is None:
        correctors = [solve_cell_problem(m, 1), solve_cell_problem(m, 2)]
    mask = m.region_mask("MATRIX")
    tri = m.triangles[mask]
    area, grad = triangle_geometry(m.vertices, tri)
    matrix_area = float(area.sum())
    Ah = np.zeros((3, 3))
    for sol in correctors:
        a = sol.alpha - 1
        vals = sol.vertex_values()[tri]                      # (nt, 3)
        dN = np.einsum("tk,tkd->td", vals, grad)              # elementwise gradient
        Ah[a, :2] = area @ dN
        Ah[a, a] += matrix_area
    Ah[2, 2] = matrix_area
    return Ah


def harmonic_mean(profile: CoefficientProfile) -> float:
    """``(int_0^1 1/a)^-1``, exact for piecewise constants."""
    return float(1.0 / np.sum(profile.lengths / np.asarray(profile.values, dtype=float)))


@dataclass
class HomogenizedCoefficients:
    Ah: np.ndarray
    ah: float
    r: float
    h: float
    quadrature: str = "exact P1"
    Ah33_analytic: float = field(default=np.nan)

    @classmethod
    def compute(cls, m: PeriodicMesh2D, profile: CoefficientProfile) -> "HomogenizedCoefficients":
        return cls(homogenized_matrix(m), harmonic_mean(profile), m.r, m.h,
                   Ah33_analytic=1.0 - np.pi * m.r ** 2)

    def to_text(self) -> str:
        lines = [f"coefficients v1 r={self.r!r} h={self.h!r} quadrature={self.quadrature}"]
        lines.append("Ah 3x3")
        for row in self.Ah:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        lines.append(f"ah {self.ah:.17g}")
        lines.append(f"Ah33_analytic {self.Ah33_analytic:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "HomogenizedCoefficients":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        head = lines[0].split()
        if head[:2] != ["coefficients", "v1"]:
            raise ValueError("not a coefficients v1 block")
        # values may contain spaces (``quadrature=exact P1``)
        meta = dict(re.findall(r"(\w+)=(.*?)(?=\s+\w+=|$)", lines[0]))
        if lines[1] != "Ah 3x3":
            raise ValueError("missing Ah block")
        Ah = np.array([[float(v) for v in lines[2 + i].split()] for i in range(3)])
        rest = dict(ln.split(None, 1) for ln in lines[5:])
        return cls(Ah, float(rest["ah"]), float(meta["r"]), float(meta["h"]),
                   meta.get("quadrature", "exact P1"),
                   float(rest.get("Ah33_analytic", "nan")))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())
