"""Weak gradients and weak divergences of EG velocities.

On each cell the weak gradient is the constant tensor

    (grad_w v)|_T = (1/|T|) sum_{e in dT} |e| vb(m_e) (x) n_{T,e}

where ``vb`` is the facet value of ``v`` and ``m_e`` the facet centroid. The
facet value is linear, so the one-point rule is exact. The weak divergence is
the trace.

Facet values
------------
interior facets
    the average ``(v+ + v-)/2``;
boundary facets
    the trace of the continuous part only (``boundary_value="continuous"``,
    the default), which enforces ``v^D = 0`` weakly on boundary cells. The
    alternative ``"full"`` uses the whole one-sided trace and exists for
    testing only.

The same convention fixes the boundary jump: ``[v] = v - vb`` there, i.e. the
enrichment trace under the default.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spaces import EGField, EGSpace

__all__ = [
    "WeakGradientStencil",
    "build_stencil",
    "weak_gradient",
    "weak_divergence",
    "weak_gradient_cell",
    "weak_divergence_cell",
    "weak_gradient_wg",
    "jump_on_facet",
    "strong_weak_residual",
    "strong_weak_div_residual",
]

BOUNDARY_VALUES = ("continuous", "full")


@dataclass(frozen=True)
class WeakGradientStencil:
    """Per-cell linear maps from local coefficients to ``grad_w v|_T``.

    ``dofs[T]`` lists the global velocity DOFs touching ``grad_w`` on ``T``:
    the ``d(d+1)`` continuous DOFs of ``T``, the enrichment of ``T``, then the
    enrichment of each facet neighbour (``-1`` across boundary facets, where
    the coefficient block is zero). ``coeffs[T]`` has shape ``(d, d, L)``.
    """

    space: EGSpace
    dofs: np.ndarray  # (C, L)
    coeffs: np.ndarray  # (C, d, d, L)
    boundary_value: str = "continuous"

    @property
    def safe_dofs(self) -> np.ndarray:
        """``dofs`` with placeholders replaced by 0 (their coefficients vanish)."""
        return np.where(self.dofs < 0, 0, self.dofs)

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        vals = np.where(self.dofs < 0, 0.0, coeffs[self.safe_dofs])
        return np.einsum("cijl,cl->cij", self.coeffs, vals)


def build_stencil(space: EGSpace, boundary_value: str = "continuous") -> WeakGradientStencil:
    if boundary_value not in BOUNDARY_VALUES:
        raise ValueError(f"boundary_value must be one of {BOUNDARY_VALUES}")
    mesh = space.mesh
    d = space.dim
    C = mesh.num_cells
    nc = d * (d + 1)
    L = nc + 1 + (d + 1)

    dofs = np.empty((C, L), dtype=np.int64)
    dofs[:, : nc + 1] = space.cell_dofs
    nbr = mesh.cell_neighbors  # (C, d+1)
    dofs[:, nc + 1:] = np.where(nbr >= 0, space.n_cont + nbr, -1)

    coeffs = np.zeros((C, d, d, L))
    # continuous hats: grad_w = grad
    grads = mesh.bary_grads  # (C, d+1, d)
    for i in range(d):
        coeffs[:, i, :, i * (d + 1):(i + 1) * (d + 1)] = np.swapaxes(grads, 1, 2)

    interior = nbr >= 0
    area = mesh.facet_measures[mesh.cell_facets]  # (C, d+1)
    normals = mesh.outward_normals()  # (C, d+1, d)
    mids = mesh.facet_midpoints[mesh.cell_facets]  # (C, d+1, d)
    inv_vol = 1.0 / mesh.cell_measures

    # own enrichment
    w_own = np.where(interior, 0.5, 0.0 if boundary_value == "continuous" else 1.0)
    psi_own = mids - mesh.cell_barycenters[:, None, :]
    coeffs[:, :, :, nc] = np.einsum(
        "c,ck,cki,ckj->cij", inv_vol, w_own * area, psi_own, normals
    )
    # neighbour enrichment, one facet each
    safe_nbr = np.where(interior, nbr, 0)
    psi_nbr = mids - mesh.cell_barycenters[safe_nbr]
    w_nbr = np.where(interior, 0.5, 0.0) * area * inv_vol[:, None]
    coeffs[:, :, :, nc + 1:] = np.einsum("ck,cki,ckj->cijk", w_nbr, psi_nbr, normals)
    return WeakGradientStencil(space, dofs, coeffs, boundary_value)


def _coeff_vector(obj) -> np.ndarray:
    return obj.coeffs if isinstance(obj, EGField) else np.asarray(obj, dtype=float)


def weak_gradient(stencil: WeakGradientStencil, field) -> np.ndarray:
    """``grad_w v`` on every cell, shape ``(C, d, d)``."""
    return stencil.apply(_coeff_vector(field))


def weak_divergence(stencil: WeakGradientStencil, field) -> np.ndarray:
    return np.trace(weak_gradient(stencil, field), axis1=1, axis2=2)


def weak_gradient_cell(stencil: WeakGradientStencil, field, cell: int) -> np.ndarray:
    vec = _coeff_vector(field)
    dofs = stencil.dofs[cell]
    vals = np.where(dofs < 0, 0.0, vec[np.where(dofs < 0, 0, dofs)])
    return stencil.coeffs[cell] @ vals


def weak_divergence_cell(stencil: WeakGradientStencil, field, cell: int) -> float:
    return float(np.trace(weak_gradient_cell(stencil, field, cell)))


def weak_gradient_wg(mesh, facet_integrals: np.ndarray) -> np.ndarray:
    """Weak gradient of a weak-Galerkin pair from its facet data.

    ``facet_integrals[T, k]`` is ``int_e vb ds`` over local facet ``k`` of
    ``T`` (shape ``(C, d+1, d)``); the interior component does not enter.
    """
    return np.einsum(
        "c,cki,ckj->cij", 1.0 / mesh.cell_measures, facet_integrals, mesh.outward_normals()
    )


def jump_on_facet(field: EGField, facet: int, boundary_value: str = "continuous") -> np.ndarray:
    """``[v]`` at the facet vertices (sorted order), shape ``(d, d)``.

    Interior: ``v+ - v-``. Boundary: ``v - vb``, i.e. the enrichment trace
    under the default convention and zero under ``"full"``.
    """
    mesh = field.space.mesh
    pts = mesh.vertices[mesh.facets[facet]]
    plus, minus = mesh.cell_plus[facet], mesh.cell_minus[facet]
    if minus >= 0:
        return field.eval(plus, pts) - field.eval(minus, pts)
    if boundary_value == "full":
        return np.zeros_like(pts)
    return field.eval(plus, pts) - field.eval_cont(plus, pts)


def strong_weak_residual(stencil: WeakGradientStencil, field: EGField, aleph: np.ndarray):
    """Both sides of ``(grad v - grad_w v, A)_T = <[v], {A} n_e>_E`` for cellwise constant ``A``.

    Returns ``(lhs, rhs)``. Facet integrals of the linear jump use the
    centroid value, which is exact.
    """
    mesh = field.space.mesh
    gw = weak_gradient(stencil, field)
    lhs = float(np.einsum("c,cij,cij->", mesh.cell_measures, field.broken_gradient() - gw, aleph))
    rhs = 0.0
    for f in range(mesh.num_facets):
        jump_mid = jump_on_facet(field, f, stencil.boundary_value).mean(axis=0)
        plus, minus = mesh.cell_plus[f], mesh.cell_minus[f]
        avg = aleph[plus] if minus < 0 else 0.5 * (aleph[plus] + aleph[minus])
        rhs += mesh.facet_measures[f] * jump_mid @ avg @ mesh.facet_normals[f]
    return lhs, float(rhs)


def strong_weak_div_residual(stencil: WeakGradientStencil, field: EGField, q: np.ndarray):
    """Both sides of ``(div v - div_w v, q)_T = <[v].n_e, {q}>_E`` for piecewise constant ``q``."""
    d = field.space.dim
    aleph = q[:, None, None] * np.eye(d)
    return strong_weak_residual(stencil, field, aleph)
