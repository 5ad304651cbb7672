"""Enriched Galerkin velocity space ``C_h + D_h`` and piecewise-constant pressures.

Global velocity numbering (``n_velocity = d*V + C``)::

    [ u_x at all vertices | u_y at all vertices | (u_z) | enrichment per cell ]

Pressure unknowns are numbered separately, one per cell.

Within a cell the local velocity basis is ordered component-major,
``k = i*(d+1) + a`` for the hat function of local vertex ``a`` times unit
vector ``e_i``, followed by the enrichment function ``x - x_T`` as the last
entry.

Vector-valued callbacks take points of shape ``(..., d)`` and return
``(..., d)``; gradient callbacks return ``(..., d, d)`` with
``grad[..., i, j] = d u_i / d x_j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import SimplicialMesh
from .quadrature import facet_rule, physical_weights, simplex_rule

__all__ = [
    "EGSpace",
    "EGField",
    "PressureField",
    "SingularLocalMass",
    "interpolate_Pi_h",
    "interpolate_nodal",
    "project_P0",
    "project_Theta_h",
    "integrate_cells",
]


class SingularLocalMass(np.linalg.LinAlgError):
    pass


class EGSpace:
    """DOF map of the EG velocity space and the P0 pressure space on ``mesh``."""

    def __init__(self, mesh: SimplicialMesh):
        self.mesh = mesh
        self.dim = d = mesh.dim
        V, C = mesh.num_vertices, mesh.num_cells
        self.n_cont = d * V
        self.n_enr = C
        self.n_velocity = d * V + C
        self.n_pres = C
        self.n_local = d * (d + 1) + 1

        comp = np.arange(d)[None, :, None] * V
        cont = (comp + mesh.cells[:, None, :]).reshape(C, d * (d + 1))
        self.cell_dofs = np.column_stack([cont, self.n_cont + np.arange(C)])
        self.cell_dofs.setflags(write=False)

        bnd = np.flatnonzero(mesh.boundary_vertices)
        self.boundary_dofs = (np.arange(d)[:, None] * V + bnd[None, :]).ravel()
        free = np.ones(self.n_velocity, dtype=bool)
        free[self.boundary_dofs] = False
        self.free_dofs = np.flatnonzero(free)

    def cont_dof(self, vertex, comp):
        return comp * self.mesh.num_vertices + np.asarray(vertex)

    def enr_dof(self, cell):
        return self.n_cont + np.asarray(cell)

    def zero(self) -> "EGField":
        return EGField(self, np.zeros(self.n_velocity))

    def random_field(self, rng, homogeneous: bool = False) -> "EGField":
        vec = rng.standard_normal(self.n_velocity)
        if homogeneous:
            vec[self.boundary_dofs] = 0.0
        return EGField(self, vec)


@dataclass
class EGField:
    """Discrete EG velocity ``v = v^C + v^D`` stored as one global coefficient vector."""

    space: EGSpace
    coeffs: np.ndarray

    @property
    def cont(self) -> np.ndarray:
        """Nodal values of the continuous part, shape ``(V, d)``."""
        sp = self.space
        return self.coeffs[: sp.n_cont].reshape(sp.dim, -1).T

    @property
    def enr(self) -> np.ndarray:
        """Enrichment coefficient ``c_T`` per cell."""
        return self.coeffs[self.space.n_cont:]

    @classmethod
    def from_parts(cls, space: EGSpace, cont, enr) -> "EGField":
        cont = np.asarray(cont, dtype=float).reshape(space.mesh.num_vertices, space.dim)
        return cls(space, np.concatenate([cont.T.ravel(), np.asarray(enr, dtype=float)]))

    def local_coeffs(self) -> np.ndarray:
        return self.coeffs[self.space.cell_dofs]

    def eval(self, cell: int, x) -> np.ndarray:
        """``v^C(x) + c_T (x - x_T)`` for point(s) ``x`` inside ``cell``."""
        mesh = self.space.mesh
        x = np.asarray(x, dtype=float)
        lam = mesh.barycentric(cell, x)
        vc = lam @ self.cont[mesh.cells[cell]]
        return vc + self.enr[cell] * (x - mesh.cell_barycenters[cell])

    def eval_cont(self, cell: int, x) -> np.ndarray:
        mesh = self.space.mesh
        return mesh.barycentric(cell, x) @ self.cont[mesh.cells[cell]]

    def broken_gradient(self) -> np.ndarray:
        """Cellwise gradient ``grad v^C + c_T I``, shape ``(C, d, d)``."""
        mesh = self.space.mesh
        vals = self.cont[mesh.cells]  # (C, d+1, d)
        grad = np.einsum("cai,caj->cij", vals, mesh.bary_grads)
        return grad + self.enr[:, None, None] * np.eye(self.space.dim)

    def __add__(self, other):
        return EGField(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return EGField(self.space, self.coeffs - other.coeffs)

    def __mul__(self, s):
        return EGField(self.space, s * self.coeffs)

    __rmul__ = __mul__


@dataclass
class PressureField:
    space: EGSpace
    values: np.ndarray

    def mean(self) -> float:
        m = self.space.mesh.cell_measures
        return float(m @ self.values / m.sum())

    def demeaned(self) -> "PressureField":
        return PressureField(self.space, self.values - self.mean())


def integrate_cells(mesh: SimplicialMesh, func, degree: int = 6) -> np.ndarray:
    """``int_T func`` for every cell; ``func`` maps ``(C, nq, d)`` points to ``(C, nq, ...)``."""
    rule = simplex_rule(mesh.dim, degree)
    pts = rule.map(mesh.cell_corners())
    w = physical_weights(rule, mesh.cell_measures)
    vals = np.asarray(func(pts))
    return np.einsum("cq,cq...->c...", w, vals)


def interpolate_nodal(space: EGSpace, u) -> EGField:
    """Nodal interpolant of ``u`` into the continuous part only."""
    vals = np.asarray(u(space.mesh.vertices), dtype=float)
    return EGField.from_parts(space, vals, np.zeros(space.n_enr))


def interpolate_Pi_h(space: EGSpace, u, grad_u, degree: int = 6) -> EGField:
    """EG interpolant: nodal values plus the enrichment that fixes the cell mean divergence.

    ``c_T = (1/(d|T|)) int_T div(u - Pi^C u)`` because ``div(x - x_T) = d``.
    """
    mesh = space.mesh
    d = space.dim
    nodal = interpolate_nodal(space, u)
    div_u = integrate_cells(mesh, lambda x: np.trace(grad_u(x), axis1=-2, axis2=-1), degree)
    div_c = np.trace(nodal.broken_gradient(), axis1=1, axis2=2) * mesh.cell_measures
    enr = (div_u - div_c) / (d * mesh.cell_measures)
    return EGField.from_parts(space, nodal.cont, enr)


def project_P0(space: EGSpace, q, degree: int = 6) -> PressureField:
    """Cellwise mean ``(1/|T|) int_T q`` (not de-meaned)."""
    mesh = space.mesh
    return PressureField(space, integrate_cells(mesh, q, degree) / mesh.cell_measures)


def _p1_projection(corners, measures, u, rule):
    """L2 projection onto P1 on each simplex; returns nodal values ``(n, k+1, d)``."""
    k = corners.shape[1] - 1
    pts = rule.map(corners)
    w = physical_weights(rule, measures)
    vals = np.asarray(u(pts))
    rhs = np.einsum("nq,qa,nqi->nai", w, rule.points, vals)
    local = (np.ones((k + 1, k + 1)) + np.eye(k + 1)) / ((k + 1) * (k + 2))
    mass = measures[:, None, None] * local
    if np.any(np.abs(np.linalg.det(mass)) <= 1e-300):
        raise SingularLocalMass("degenerate simplex in local L2 projection")
    return np.linalg.solve(mass, rhs)


def project_Theta_h(space: EGSpace, u, degree: int = 6):
    """Local L2 projections of ``u`` onto ``[P1(T)]^d`` and ``[P1(e)]^d``.

    Returns ``(cell_values, facet_values)`` holding nodal values of the
    projections: ``(C, d+1, d)`` at cell vertices (local order) and
    ``(F, d, d)`` at facet vertices (sorted order).
    """
    mesh = space.mesh
    cell_vals = _p1_projection(mesh.cell_corners(), mesh.cell_measures, u,
                               simplex_rule(mesh.dim, degree))
    facet_vals = _p1_projection(mesh.facet_corners(), mesh.facet_measures, u,
                                facet_rule(mesh.dim, degree))
    return cell_vals, facet_vals
