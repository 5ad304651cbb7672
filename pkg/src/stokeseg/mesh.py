"""Simplicial meshes (triangles and tetrahedra) with facet topology.

A :class:`SimplicialMesh` is built once from vertex coordinates and cell
connectivity and then treated as immutable. Construction orients every cell
positively, numbers the facets, and precomputes the geometric quantities the
discretizations need: cell measures, barycenters, diameters, barycentric
gradients, facet normals, facet measures and ``h_e``.

Facet conventions
-----------------
* facet vertices are sorted by ascending global index;
* ``cell_plus`` is the incident cell with the smaller index, ``cell_minus``
  is the other one or ``-1`` on the boundary;
* ``normals`` point out of ``cell_plus`` (outward on the boundary).
"""
from __future__ import annotations

from math import factorial
from pathlib import Path
from typing import NamedTuple

import numpy as np

__all__ = [
    "SimplicialMesh",
    "Facet",
    "MeshError",
    "ParseError",
    "TopologyError",
    "PerturbationFoldover",
    "generate_unit_square",
    "generate_unit_cube",
    "generate_lshape",
    "generate_square_with_hole",
    "perturb",
    "load_mesh",
    "save_mesh",
    "mesh_quality",
]


class MeshError(ValueError):
    pass


class ParseError(MeshError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


class TopologyError(MeshError):
    pass


class PerturbationFoldover(MeshError):
    pass


class Facet(NamedTuple):
    vertices: tuple[int, ...]
    cell_plus: int
    cell_minus: int  # -1 on the boundary
    normal: np.ndarray
    measure: float
    h_e: float
    midpoint: np.ndarray
    boundary: bool


def _simplex_jacobians(vertices, cells):
    corners = vertices[cells]  # (C, d+1, d)
    jac = corners[:, 1:, :] - corners[:, :1, :]  # rows are edge vectors
    return corners, jac


class SimplicialMesh:
    """Conforming simplicial mesh in 2D or 3D.

    Parameters
    ----------
    vertices : (V, d) array_like
    cells : (C, d+1) array_like of int
        Zero-based vertex indices. Orientation is fixed up on construction.
    boundary_markers : dict, optional
        Maps sorted facet vertex tuples to integer markers (from mesh files).
    """

    def __init__(self, vertices, cells, boundary_markers=None):
        vertices = np.array(vertices, dtype=float)
        cells = np.array(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
            raise MeshError("vertices must have shape (V, 2) or (V, 3)")
        dim = vertices.shape[1]
        if cells.ndim != 2 or cells.shape[1] != dim + 1:
            raise MeshError(f"cells must have {dim + 1} vertices each")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise MeshError("cell refers to a nonexistent vertex")

        _, jac = _simplex_jacobians(vertices, cells)
        det = np.linalg.det(jac)
        scale = np.abs(jac).max(axis=(1, 2)) ** dim if len(jac) else np.ones(0)
        if np.any(np.abs(det) <= 1e-12 * scale):
            raise MeshError("degenerate cell (zero measure)")
        flip = det < 0
        cells[flip, 0], cells[flip, 1] = cells[flip, 1], cells[flip, 0].copy()

        self.dim = dim
        self.vertices = vertices
        self.cells = cells
        self.boundary_markers = dict(boundary_markers or {})
        self._build_geometry()
        self._build_facets()
        for arr in self.__dict__.values():
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)

    # -- construction -------------------------------------------------------
    def _build_geometry(self):
        d = self.dim
        corners, jac = _simplex_jacobians(self.vertices, self.cells)
        det = np.linalg.det(jac)
        self.cell_measures = det / factorial(d)
        self.cell_barycenters = corners.mean(axis=1)
        # rows of inv(jac).T are the gradients of lambda_1..lambda_d
        inv = np.linalg.inv(jac)  # (C, d, d): inv @ jac = I
        grads = np.empty((len(self.cells), d + 1, d))
        grads[:, 1:, :] = np.swapaxes(inv, 1, 2)
        grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
        self.bary_grads = grads
        edges = corners[:, :, None, :] - corners[:, None, :, :]
        self.cell_diameters = np.sqrt((edges**2).sum(-1)).max(axis=(1, 2))

    def _build_facets(self):
        d = self.dim
        C = len(self.cells)
        local = np.array([[j for j in range(d + 1) if j != i] for i in range(d + 1)])
        raw = self.cells[:, local]  # (C, d+1, d): facet opposite local vertex i
        keys = np.sort(raw.reshape(-1, d), axis=1)

        sorted_cells = np.sort(self.cells, axis=1)
        if len(np.unique(sorted_cells, axis=0)) != C:
            raise TopologyError("repeated cell")

        facets, inverse, counts = np.unique(
            keys, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            bad = facets[np.argmax(counts)]
            raise TopologyError(f"facet {tuple(int(v) for v in bad)} shared by more than 2 cells")

        nf = len(facets)
        owner = np.repeat(np.arange(C), d + 1)
        local_idx = np.tile(np.arange(d + 1), C)
        # stable sort by facet, then cell index: first occurrence is T+
        order = np.lexsort((owner, inverse))
        f_sorted = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = f_sorted[1:] != f_sorted[:-1]

        cell_plus = np.empty(nf, dtype=np.int64)
        plus_local = np.empty(nf, dtype=np.int64)
        cell_plus[f_sorted[first]] = owner[order][first]
        plus_local[f_sorted[first]] = local_idx[order][first]
        cell_minus = np.full(nf, -1, dtype=np.int64)
        cell_minus[f_sorted[~first]] = owner[order][~first]

        grad_opp = self.bary_grads[cell_plus, plus_local]
        gnorm = np.linalg.norm(grad_opp, axis=1)
        normals = -grad_opp / gnorm[:, None]
        # |grad lambda_i| = |e_i| / (d |T|)
        measures = d * self.cell_measures[cell_plus] * gnorm

        self.facets = facets
        self.cell_plus = cell_plus
        self.cell_minus = cell_minus
        self.facet_normals = normals
        self.facet_measures = measures
        self.facet_h = measures ** (1.0 / (d - 1))
        self.facet_midpoints = self.vertices[facets].mean(axis=1)
        self.boundary_facets = cell_minus < 0
        self.cell_facets = inverse.reshape(C, d + 1)
        self.cell_facet_signs = np.where(
            cell_plus[self.cell_facets] == np.arange(C)[:, None], 1.0, -1.0
        )
        self.cell_neighbors = np.where(
            self.cell_facet_signs > 0,
            cell_minus[self.cell_facets],
            cell_plus[self.cell_facets],
        )
        bverts = np.unique(facets[self.boundary_facets])
        mask = np.zeros(len(self.vertices), dtype=bool)
        mask[bverts] = True
        self.boundary_vertices = mask

    # -- queries ------------------------------------------------------------
    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_facets(self) -> int:
        return len(self.facets)

    @property
    def h(self) -> float:
        return float(self.cell_diameters.max())

    def facet(self, i: int) -> Facet:
        return Facet(
            vertices=tuple(int(v) for v in self.facets[i]),
            cell_plus=int(self.cell_plus[i]),
            cell_minus=int(self.cell_minus[i]),
            normal=self.facet_normals[i],
            measure=float(self.facet_measures[i]),
            h_e=float(self.facet_h[i]),
            midpoint=self.facet_midpoints[i],
            boundary=bool(self.boundary_facets[i]),
        )

    def outward_normals(self) -> np.ndarray:
        """``n_{T,e}`` for every cell and local facet, shape ``(C, d+1, d)``."""
        return self.facet_normals[self.cell_facets] * self.cell_facet_signs[..., None]

    def cell_corners(self) -> np.ndarray:
        return self.vertices[self.cells]

    def facet_corners(self) -> np.ndarray:
        return self.vertices[self.facets]

    def barycentric(self, cell: int, x) -> np.ndarray:
        """Barycentric coordinates of point(s) ``x`` in ``cell``."""
        x = np.asarray(x, dtype=float)
        x0 = self.vertices[self.cells[cell, 0]]
        lam = np.empty(x.shape[:-1] + (self.dim + 1,))
        lam[..., 1:] = (x - x0) @ self.bary_grads[cell, 1:].T
        lam[..., 0] = 1.0 - lam[..., 1:].sum(-1)
        return lam

    def __repr__(self):
        return (
            f"SimplicialMesh(dim={self.dim}, vertices={self.num_vertices}, "
            f"cells={self.num_cells}, facets={self.num_facets})"
        )


# -- generators -------------------------------------------------------------
def _grid_triangles(nx, ny, keep=None):
    cells = []
    for j in range(ny):
        for i in range(nx):
            if keep is not None and not keep(i, j):
                continue
            v00 = j * (nx + 1) + i
            v10, v01, v11 = v00 + 1, v00 + nx + 1, v00 + nx + 2
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return np.array(cells, dtype=np.int64)


def _compact(vertices, cells):
    used = np.unique(cells)
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return vertices[used], remap[cells]


def generate_unit_square(n: int) -> SimplicialMesh:
    """``2 n^2`` triangles on (0,1)^2, each grid square split along its (0,0)-(1,1) diagonal."""
    if n < 1:
        raise ValueError("n must be >= 1")
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    return SimplicialMesh(vertices, _grid_triangles(n, n))


def generate_unit_cube(n: int) -> SimplicialMesh:
    """``6 n^3`` tetrahedra on (0,1)^3 (Kuhn split along each subcube's main diagonal)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    t = np.linspace(0.0, 1.0, n + 1)
    Z, Y, X = np.meshgrid(t, t, t, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return (k * (n + 1) + j) * (n + 1) + i

    steps = [np.eye(3, dtype=int)[list(p)] for p in
             [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]]
    cells = []
    for k in range(n):
        for j in range(n):
            for i in range(n):
                for s in steps:
                    p = np.array([i, j, k])
                    tet = [vid(*p)]
                    for e in s:
                        p = p + e
                        tet.append(vid(*p))
                    cells.append(tet)
    return SimplicialMesh(vertices, np.array(cells, dtype=np.int64))


def generate_lshape(n: int) -> SimplicialMesh:
    """Triangulation of (-1,1)^2 minus [0,1]x[-1,0] with grid spacing ``1/n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = 2 * n
    t = np.linspace(-1.0, 1.0, m + 1)
    X, Y = np.meshgrid(t, t)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    cells = _grid_triangles(m, m, keep=lambda i, j: not (i >= n and j < n))
    return SimplicialMesh(*_compact(vertices, cells))


def generate_square_with_hole(n: int, radius: float = 0.25, grading: float = 3.0) -> SimplicialMesh:
    """Unit square with a polygonal hole of the given radius at (0.5, 0.5).

    Triangles are smaller near the hole (``grading`` times finer at the circle
    than at the outer boundary). Built by Delaunay triangulation of a graded
    point set. Save it with :func:`save_mesh` to feed ``--problem file:...``.
    """
    from scipy.spatial import Delaunay

    if not 0 < radius < 0.5:
        raise ValueError("radius must lie in (0, 0.5)")
    center = np.array([0.5, 0.5])
    h_out = 1.0 / n
    h_in = h_out / grading
    pts = []
    t = np.linspace(0.0, 1.0, n + 1)
    for s in t[:-1]:
        pts += [(s, 0.0), (1.0, s), (1.0 - s, 1.0), (0.0, 1.0 - s)]
    n_circ = max(8, int(np.ceil(2 * np.pi * radius / h_in)))
    ang = 2 * np.pi * np.arange(n_circ) / n_circ
    circle = center + radius * np.column_stack([np.cos(ang), np.sin(ang)])
    pts += [tuple(p) for p in circle]
    # graded rings between the circle and the outer square
    r = radius
    while True:
        hr = h_in + (h_out - h_in) * min(1.0, (r - radius) / (0.5 - radius))
        r += hr
        if r > 0.75:
            break
        k = max(8, int(np.ceil(2 * np.pi * r / hr)))
        a = 2 * np.pi * (np.arange(k) + 0.5 * (len(pts) % 2)) / k
        ring = center + r * np.column_stack([np.cos(a), np.sin(a)])
        inside = np.all((ring > 0.5 * hr) & (ring < 1 - 0.5 * hr), axis=1)
        pts += [tuple(p) for p in ring[inside]]
    # fill the corners with a uniform grid kept away from the rings
    g = t[1:-1]
    GX, GY = np.meshgrid(g, g)
    grid = np.column_stack([GX.ravel(), GY.ravel()])
    dist = np.linalg.norm(grid - center, axis=1)
    pts += [tuple(p) for p in grid[dist > r - 0.5 * h_out]]
    points = np.unique(np.round(np.array(pts), 14), axis=0)
    tri = Delaunay(points)
    cells = tri.simplices
    cent = points[cells].mean(axis=1)
    cells = cells[np.linalg.norm(cent - center, axis=1) > radius]
    corners = points[cells]
    e1, e2 = corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    cells = cells[area > 1e-12]
    return SimplicialMesh(*_compact(points, cells))


def perturb(mesh: SimplicialMesh, amplitude: float = 0.3, seed: int = 0,
            max_tries: int = 100) -> SimplicialMesh:
    """Randomly move interior vertices by up to ``amplitude`` times the local mesh size.

    The local size of a vertex is its shortest incident edge. Each vertex is
    redrawn (up to ``max_tries`` times) until all incident cells stay
    positively oriented.
    """
    if not 0 <= amplitude < 0.5:
        raise ValueError("amplitude must lie in [0, 0.5)")
    if amplitude == 0:
        return mesh
    rng = np.random.default_rng(seed)
    d = mesh.dim
    verts = mesh.vertices.copy()
    cells = mesh.cells
    V = mesh.num_vertices
    vert_cells = [[] for _ in range(V)]
    for c, cell in enumerate(cells):
        for v in cell:
            vert_cells[v].append(c)
    local_h = np.full(V, np.inf)
    for a in range(d + 1):
        for b in range(a + 1, d + 1):
            ln = np.linalg.norm(verts[cells[:, a]] - verts[cells[:, b]], axis=1)
            np.minimum.at(local_h, cells[:, a], ln)
            np.minimum.at(local_h, cells[:, b], ln)

    def positive(cs):
        corners = verts[cells[cs]]
        jac = corners[:, 1:, :] - corners[:, :1, :]
        vol = np.linalg.det(jac) / factorial(d)
        return np.all(vol > 1e-3 * local_h[cells[cs]].min() ** d)

    for v in np.flatnonzero(~mesh.boundary_vertices):
        origin = verts[v].copy()
        cs = vert_cells[v]
        for _ in range(max_tries):
            verts[v] = origin + rng.uniform(-1.0, 1.0, d) * amplitude * local_h[v]
            if positive(cs):
                break
        else:
            raise PerturbationFoldover(f"vertex {v}: no admissible displacement in {max_tries} draws")
    return SimplicialMesh(verts, cells, mesh.boundary_markers)


# -- file I/O ---------------------------------------------------------------
def load_mesh(path, format: str = "smesh") -> SimplicialMesh:
    """Read a mesh in the ASCII ``.smesh`` node/element format."""
    if format != "smesh":
        raise ValueError(f"unsupported mesh format {format!r}")
    lines = Path(path).read_text().splitlines()
    it = iter(
        (i + 1, ln.split()) for i, ln in enumerate(lines)
        if ln.strip() and not ln.lstrip().startswith("#")
    )

    def header(expected):
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise ParseError(len(lines), f"missing '{expected}' section") from None
        if tok[0] != expected:
            raise ParseError(lineno, f"expected '{expected}', got '{tok[0]}'")
        if len(tok) != 2:
            raise ParseError(lineno, f"'{expected}' takes exactly one value")
        try:
            return lineno, int(tok[1])
        except ValueError:
            raise ParseError(lineno, f"invalid integer {tok[1]!r}") from None

    def rows(count, width, cast, what):
        out = []
        for _ in range(count):
            try:
                lineno, tok = next(it)
            except StopIteration:
                raise ParseError(len(lines), f"unexpected end of file in {what}") from None
            if len(tok) != width:
                raise ParseError(lineno, f"{what} row needs {width} entries, got {len(tok)}")
            try:
                out.append([cast(t) for t in tok])
            except ValueError:
                raise ParseError(lineno, f"malformed {what} row") from None
        return out

    lineno, dim = header("dim")
    if dim not in (2, 3):
        raise ParseError(lineno, f"dim must be 2 or 3, got {dim}")
    _, nv = header("vertices")
    vertices = np.array(rows(nv, dim, float, "vertex"), dtype=float).reshape(nv, dim)
    _, nc = header("cells")
    cells = np.array(rows(nc, dim + 1, int, "cell"), dtype=np.int64).reshape(nc, dim + 1)
    if cells.size and (cells.min() < 0 or cells.max() >= nv):
        raise TopologyError("cell refers to a nonexistent vertex")
    markers = {}
    for lineno, tok in it:
        if tok[0] != "boundary_markers":
            raise ParseError(lineno, f"unknown keyword {tok[0]!r}")
        if len(tok) != 2 or not tok[1].isdigit():
            raise ParseError(lineno, "'boundary_markers' takes exactly one value")
        for r in rows(int(tok[1]), dim + 1, int, "boundary marker"):
            markers[tuple(sorted(r[:-1]))] = r[-1]
    return SimplicialMesh(vertices, cells, markers)


def save_mesh(mesh: SimplicialMesh, path) -> None:
    out = [f"dim {mesh.dim}", f"vertices {mesh.num_vertices}"]
    out += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    out.append(f"cells {mesh.num_cells}")
    out += [" ".join(str(int(i)) for i in c) for c in mesh.cells]
    if mesh.boundary_markers:
        out.append(f"boundary_markers {len(mesh.boundary_markers)}")
        out += [" ".join(map(str, k)) + f" {m}" for k, m in sorted(mesh.boundary_markers.items())]
    Path(path).write_text("\n".join(out) + "\n")


# -- quality ----------------------------------------------------------------
def triangle_quality(corners: np.ndarray) -> np.ndarray:
    """``4 sqrt(3) |T| / sum(l_i^2)`` for triangles given as ``(..., 3, 2)`` corners."""
    corners = np.asarray(corners, dtype=float)
    e0 = corners[..., 1, :] - corners[..., 0, :]
    e1 = corners[..., 2, :] - corners[..., 0, :]
    e2 = corners[..., 2, :] - corners[..., 1, :]
    area = 0.5 * np.abs(e0[..., 0] * e1[..., 1] - e0[..., 1] * e1[..., 0])
    ssq = (e0**2).sum(-1) + (e1**2).sum(-1) + (e2**2).sum(-1)
    return 4.0 * np.sqrt(3.0) * area / ssq


def mesh_quality(mesh: SimplicialMesh) -> np.ndarray:
    if mesh.dim != 2:
        raise ValueError("mesh quality is only defined for triangle meshes")
    return triangle_quality(mesh.cell_corners())
