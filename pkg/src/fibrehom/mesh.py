"""Periodic interface-fitted meshes for the fibre cell.

The cross-section ``[-1/2, 1/2]^2`` is meshed in the octant
``0 <= y <= x <= 1/2`` and reflected through the dihedral group of the
square, so the triangulation itself (not only the vertex set) is symmetric.
Vertices on the ``x = 1/2`` and ``y = 1/2`` edges are kept as geometric
copies and glued to their ``-1/2`` partners through ``periodic_pairs``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MATRIX = 0
FIBRE = 1

_TAG_NAMES = {MATRIX: "MATRIX", FIBRE: "FIBRE"}
_SQRT_HALF = math.sqrt(0.5)


class ParameterError(ValueError):
    """Raised when a geometric or discretisation parameter is out of range."""


@dataclass(frozen=True)
class CoefficientProfile:
    """Axial coefficient ``a(y3)`` on ``[0, 1)``.

    ``values[i]`` holds on ``[breakpoints[i], breakpoints[i+1])`` with the last
    piece running up to 1.
    """

    values: tuple[float, ...]
    breakpoints: tuple[float, ...] = (0.0,)
    nu: float = 0.1

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        bps = tuple(float(b) for b in self.breakpoints)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "breakpoints", bps)
        if not 0.0 < self.nu < 1.0:
            raise ParameterError(f"ellipticity constant nu={self.nu} not in (0, 1)")
        if len(values) == 0 or len(values) != len(bps):
            raise ParameterError("need one value per breakpoint")
        if bps[0] != 0.0:
            raise ParameterError("first breakpoint must be 0")
        if any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])) or bps[-1] >= 1.0:
            raise ParameterError("breakpoints must be strictly ascending in [0, 1)")
        for v in values:
            if not self.nu < v < 1.0 / self.nu:
                raise ParameterError(f"value {v} violates nu < a < 1/nu (nu={self.nu})")

    @classmethod
    def constant(cls, value: float = 1.0, nu: float = 0.1) -> "CoefficientProfile":
        return cls((value,), (0.0,), nu)

    @property
    def kind(self) -> str:
        return "constant" if len(self.values) == 1 else "piecewise-constant"

    @property
    def lengths(self) -> np.ndarray:
        edges = np.append(self.breakpoints, 1.0)
        return np.diff(edges)

    def __call__(self, s) -> np.ndarray:
        s = np.mod(np.asarray(s, dtype=float), 1.0)
        idx = np.searchsorted(self.breakpoints, s, side="right") - 1
        return np.asarray(self.values)[idx]

    def shifted(self, shift: float) -> "CoefficientProfile":
        """The same profile seen from a cell origin moved by ``shift``."""
        starts = np.mod(np.asarray(self.breakpoints) - shift, 1.0)
        starts = np.where(np.isclose(starts, 1.0, rtol=0, atol=1e-15), 0.0, starts)
        order = np.argsort(starts)
        starts = starts[order]
        values = np.asarray(self.values)[order]
        if starts[0] != 0.0:
            # the piece covering 0 is the one that wraps around
            starts = np.concatenate([[0.0], starts])
            values = np.concatenate([[values[-1]], values])
        return CoefficientProfile(tuple(values), tuple(starts), self.nu)


@dataclass(frozen=True, eq=False)
class PeriodicMesh2D:
    vertices: np.ndarray          # (nv, 2)
    triangles: np.ndarray         # (nt, 3), counter-clockwise
    tags: np.ndarray              # (nt,) MATRIX / FIBRE
    interface_nodes: np.ndarray   # vertex indices on the polygonal circle
    periodic_pairs: np.ndarray    # (np, 2): (copy on +1/2 edge, master)
    r: float
    h: float
    dof: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nv = len(self.vertices)
        master = np.arange(nv)
        for slave, mast in self.periodic_pairs:
            master[slave] = mast
        # corners are glued in two hops (x and y)
        for _ in range(2):
            master = master[master]
        uniq, dof = np.unique(master, return_inverse=True)
        object.__setattr__(self, "dof", dof.astype(np.int64))
        for arr in (self.vertices, self.triangles, self.tags,
                    self.interface_nodes, self.periodic_pairs, self.dof):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_dofs(self) -> int:
        return int(self.dof.max()) + 1

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def region_area(self, region: str = "ALL") -> float:
        return float(self.signed_areas()[self.region_mask(region)].sum())

    def region_mask(self, region: str) -> np.ndarray:
        if region == "ALL":
            return np.ones(len(self.triangles), dtype=bool)
        if region == "MATRIX":
            return self.tags == MATRIX
        if region == "FIBRE":
            return self.tags == FIBRE
        raise ValueError(f"unknown region {region!r}")

    def dof_coordinates(self) -> np.ndarray:
        """Coordinates of a representative vertex per periodic dof."""
        coords = np.empty((self.n_dofs, 2))
        coords[self.dof[::-1]] = self.vertices[::-1]
        return coords

    def expand(self, dof_values: np.ndarray) -> np.ndarray:
        """Periodic dof vector (leading axis) -> per-vertex values."""
        return np.asarray(dof_values)[self.dof]

    def with_tags(self, tags) -> "PeriodicMesh2D":
        return PeriodicMesh2D(self.vertices, self.triangles, np.asarray(tags, dtype=np.int8).copy(),
                              self.interface_nodes, self.periodic_pairs, self.r, self.h)

    def save(self, path) -> None:
        write_mesh(self, path)


@dataclass(frozen=True, eq=False)
class PeriodicMesh1D:
    nodes: np.ndarray
    profile: CoefficientProfile

    def __post_init__(self):
        self.nodes.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def elements(self) -> np.ndarray:
        i = np.arange(self.n)
        return np.stack([i, (i + 1) % self.n], axis=1)

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(np.append(self.nodes, 1.0))

    @property
    def h3(self) -> float:
        return float(self.lengths.max())

    def element_coefficient(self, profile: CoefficientProfile | None = None) -> np.ndarray:
        """Value of ``a`` on each element (exact since breakpoints are nodes)."""
        profile = profile or self.profile
        mid = self.nodes + 0.5 * self.lengths
        return profile(mid)


@dataclass(frozen=True, eq=False)
class DiskSubmesh:
    """The FIBRE triangles of a cross-section mesh, renumbered.

    ``parent_vertex`` and ``parent_triangle`` map back to the full mesh;
    ``boundary`` flags the interface (Dirichlet) vertices.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    parent_vertex: np.ndarray
    parent_triangle: np.ndarray
    boundary: np.ndarray
    parent: PeriodicMesh2D

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())


# --------------------------------------------------------------------------
# construction

def _zip_strip(inner: np.ndarray, outer: np.ndarray, s_in: np.ndarray, s_out: np.ndarray):
    """Triangulate the strip between two polylines parametrised by ``s``.

    Both lists run from s=0 to s=1; ``inner`` is closer to the origin. The
    advancing choice keeps both fronts level in ``s``.
    """
    tris = []
    i = j = 0
    ni, no = len(inner) - 1, len(outer) - 1
    while i < ni or j < no:
        if j == no or (i < ni and s_in[i + 1] < s_out[j + 1]):
            tris.append((inner[i], inner[i + 1], outer[j]))
            i += 1
        else:
            tris.append((inner[i], outer[j + 1], outer[j]))
            j += 1
    return tris


def _octant(r: float, h: float, layers: int = 0):
    """Vertices/triangles of the fundamental region 0 <= y <= x <= 1/2.

    ``layers`` > 0 splits the outermost disk ring geometrically towards the
    interface (spacings halve ``layers`` times).
    """
    m = max(1, math.ceil((math.pi / 4) * r / h))
    n_ring = max(1, math.ceil(r / h))
    pts: list[tuple[float, float]] = [(0.0, 0.0)]
    tris: list[tuple[int, int, int]] = []
    tags: list[int] = []

    def arc_point(rho, s):
        if s == 1.0:
            return (rho * _SQRT_HALF, rho * _SQRT_HALF)
        phi = 0.25 * math.pi * s
        return (rho * math.cos(phi), rho * math.sin(phi))

    prev_idx = np.array([0])
    prev_s = np.array([0.0])
    # disk rings; the centre is a degenerate ring with a single point
    radii = [r * i / n_ring for i in range(1, n_ring + 1)]
    counts = [max(1, round(m * i / n_ring)) for i in range(1, n_ring + 1)]
    if layers and n_ring > 1:
        dr = r / n_ring
        extra = [r - dr * 0.5 ** j for j in range(1, layers + 1)]
        radii = radii[:-1] + extra + [r]
        counts = counts[:-1] + [counts[-1]] * (layers + 1)
    for i, (rho, mi) in enumerate(zip(radii, counts), start=1):
        s = np.arange(mi + 1) / mi
        idx = np.arange(len(pts), len(pts) + mi + 1)
        pts.extend(arc_point(rho, float(si)) for si in s)
        if i == 1:
            for k in range(mi):
                tris.append((0, idx[k], idx[k + 1]))
        else:
            tris.extend(_zip_strip(prev_idx, idx, prev_s, s))
        tags.extend([FIBRE] * (len(tris) - len(tags)))
        prev_idx, prev_s = idx, s
    interface = prev_idx.copy()

    # outer layers blend the arc into the edge x = 1/2
    m_out = max(m, math.ceil(0.5 / h))
    n_layer = max(1, math.ceil((math.sqrt(0.5) - r) / h))
    for l in range(1, n_layer + 1):
        t = l / n_layer
        ml = max(1, round(m + (m_out - m) * t))
        s = np.arange(ml + 1) / ml
        idx = np.arange(len(pts), len(pts) + ml + 1)
        for si in s:
            si = float(si)
            if l == n_layer:
                pts.append((0.5, 0.5 * si))
                continue
            ax, ay = arc_point(r, si)
            qx, qy = 0.5, 0.5 * si
            x = (1 - t) * ax + t * qx
            y = (1 - t) * ay + t * qy
            if si == 1.0:
                y = x
            pts.append((x, y))
        tris.extend(_zip_strip(prev_idx, idx, prev_s, s))
        tags.extend([MATRIX] * (len(tris) - len(tags)))
        prev_idx, prev_s = idx, s

    return np.array(pts), np.array(tris, dtype=np.int64), np.array(tags, dtype=np.int8), interface


_DIHEDRAL = [
    lambda x, y: (x, y),
    lambda x, y: (y, x),
    lambda x, y: (-x, y),
    lambda x, y: (y, -x),
    lambda x, y: (x, -y),
    lambda x, y: (-y, x),
    lambda x, y: (-x, -y),
    lambda x, y: (-y, -x),
]


def build_cross_section_mesh(r: float, h: float, layers: int = 0) -> PeriodicMesh2D:
    """Symmetric periodic mesh of the unit square resolving the disk ``|y| < r``.

    ``layers`` grades the outermost disk ring towards the interface, where
    the fibre problem develops a boundary layer of width ``eps``.
    """
    if not (0.0 < r < 0.5):
        raise ParameterError(f"radius r={r} must lie in (0, 1/2)")
    if not (0.0 < h <= r / 2):
        raise ParameterError(f"mesh size h={h} must lie in (0, r/2]")
    if layers < 0:
        raise ParameterError("layers must be >= 0")
    pts, tris, tags, iface = _octant(r, h, layers)

    key_to_idx: dict[tuple[int, int], int] = {}
    verts: list[tuple[float, float]] = []
    all_tris = []
    all_tags = []
    iface_set = set()
    scale = 1e11

    for g in _DIHEDRAL:
        gx, gy = g(pts[:, 0], pts[:, 1])
        local = np.empty(len(pts), dtype=np.int64)
        for k, (x, y) in enumerate(zip(gx, gy)):
            x = float(x) + 0.0   # normalise -0.0
            y = float(y) + 0.0
            key = (round(x * scale), round(y * scale))
            idx = key_to_idx.get(key)
            if idx is None:
                idx = len(verts)
                key_to_idx[key] = idx
                verts.append((x, y))
            local[k] = idx
        t = local[tris]
        all_tris.append(t)
        all_tags.append(tags)
        iface_set.update(local[iface].tolist())

    vertices = np.array(verts)
    triangles = np.concatenate(all_tris)
    tag_arr = np.concatenate(all_tags)
    p = vertices[triangles]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = area < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    pairs = []
    for (kx, ky), idx in key_to_idx.items():
        x, y = verts[idx]
        if x == 0.5:
            pairs.append((idx, key_to_idx[(round(-0.5 * scale), ky)]))
        if y == 0.5:
            pairs.append((idx, key_to_idx[(kx, round(-0.5 * scale))]))
    pairs.sort()
    return PeriodicMesh2D(
        vertices=vertices,
        triangles=triangles,
        tags=tag_arr,
        interface_nodes=np.array(sorted(iface_set), dtype=np.int64),
        periodic_pairs=np.array(pairs, dtype=np.int64).reshape(-1, 2),
        r=float(r),
        h=float(h),
    )


def build_interval_mesh(n: int, profile: CoefficientProfile | None = None) -> PeriodicMesh1D:
    """Periodic partition of [0, 1) with ``n`` nodes containing every breakpoint.

    The node budget is shared among the coefficient pieces in proportion to
    their lengths; each piece is then split uniformly.
    """
    if n < 2:
        raise ParameterError(f"need at least 2 nodes, got n={n}")
    profile = profile or CoefficientProfile.constant()
    lengths = profile.lengths
    npieces = len(lengths)
    if n < npieces:
        raise ParameterError(f"n={n} smaller than the number of coefficient pieces")
    # largest-remainder apportionment of n elements over the pieces
    quota = n * lengths
    counts = np.maximum(1, np.floor(quota).astype(int))
    while counts.sum() < n:
        counts[np.argmax(quota - counts)] += 1
    while counts.sum() > n:
        cand = np.where(counts > 1, counts - quota, -np.inf)
        counts[np.argmax(cand)] -= 1
    nodes = []
    edges = np.append(profile.breakpoints, 1.0)
    for a, b, c in zip(edges[:-1], edges[1:], counts):
        nodes.extend(a + (b - a) * np.arange(c) / c)
    return PeriodicMesh1D(np.array(nodes), profile)


def fibre_submesh(m: PeriodicMesh2D) -> DiskSubmesh:
    tri_idx = np.flatnonzero(m.tags == FIBRE)
    used = np.unique(m.triangles[tri_idx])
    renum = np.full(m.n_vertices, -1, dtype=np.int64)
    renum[used] = np.arange(len(used))
    boundary = np.isin(used, m.interface_nodes)
    return DiskSubmesh(
        vertices=m.vertices[used],
        triangles=renum[m.triangles[tri_idx]],
        parent_vertex=used,
        parent_triangle=tri_idx,
        boundary=boundary,
        parent=m,
    )


# --------------------------------------------------------------------------
# text format

def write_mesh(m: PeriodicMesh2D, path) -> None:
    lines = [f"mesh2d v1 r={m.r!r} h={m.h!r}"]
    lines += [f"v {x:.17g} {y:.17g}" for x, y in m.vertices]
    lines += [f"t {i} {j} {k} {_TAG_NAMES[int(t)]}" for (i, j, k), t in zip(m.triangles, m.tags)]
    lines += [f"p {i} {j}" for i, j in m.periodic_pairs]
    lines += [f"i {i}" for i in m.interface_nodes]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> PeriodicMesh2D:
    text = Path(path).read_text().splitlines()
    head = text[0].split()
    if head[:2] != ["mesh2d", "v1"]:
        raise ValueError(f"{path}: not a mesh2d v1 file")
    params = dict(tok.split("=", 1) for tok in head[2:])
    verts, tris, tags, pairs, iface = [], [], [], [], []
    names = {v: k for k, v in _TAG_NAMES.items()}
    for ln in text[1:]:
        rec = ln.split()
        if not rec:
            continue
        if rec[0] == "v":
            verts.append((float(rec[1]), float(rec[2])))
        elif rec[0] == "t":
            tris.append(tuple(int(x) for x in rec[1:4]))
            tags.append(names[rec[4]])
        elif rec[0] == "p":
            pairs.append((int(rec[1]), int(rec[2])))
        elif rec[0] == "i":
            iface.append(int(rec[1]))
        else:
            raise ValueError(f"{path}: unknown record {rec[0]!r}")
    return PeriodicMesh2D(
        vertices=np.array(verts),
        triangles=np.array(tris, dtype=np.int64),
        tags=np.array(tags, dtype=np.int8),
        interface_nodes=np.array(iface, dtype=np.int64),
        periodic_pairs=np.array(pairs, dtype=np.int64).reshape(-1, 2),
        r=float(params["r"]),
        h=float(params["h"]),
    )
