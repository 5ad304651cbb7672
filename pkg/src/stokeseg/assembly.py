"""Sparse saddle-point systems for the EG, mEG and PR-mEG Stokes discretizations.

All three methods share the EG spaces. The velocity block ``A`` and the
divergence block ``B`` act on the global velocity numbering of
:class:`~stokeseg.spaces.EGSpace`; ``B`` has one row per cell and represents
``b(v, q)`` for the cell indicator ``q``.

Boundary jumps are taken as the enrichment trace: the continuous part on the
boundary is prescribed by nodal lifting (:func:`apply_dirichlet`), and
``v^D = 0`` is imposed weakly.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .quadrature import facet_rule, physical_weights, reference_measure, simplex_rule
from .spaces import EGField, EGSpace
from .weakcalc import WeakGradientStencil, build_stencil

__all__ = [
    "SaddleSystem",
    "ReconstructionOperator",
    "InvalidPenalty",
    "SingularLocalBDM",
    "assemble_meg",
    "assemble_meg_penalized",
    "assemble_eg",
    "assemble_load",
    "assemble_load_pr",
    "build_reconstruction",
    "apply_dirichlet",
    "penalty_matrix",
    "eg_divergence_matrix",
    "weak_divergence_matrix",
]

LOAD_DEGREE = 5
# one degree higher for (f, R v): gradient loads must cancel against the
# pressure to near round-off, and degree 5 leaves O(h^6)/nu behind
PR_LOAD_DEGREE = 6


class InvalidPenalty(ValueError):
    pass


class SingularLocalBDM(np.linalg.LinAlgError):
    pass


@dataclass
class SaddleSystem:
    """``A u - B^T p = F``, ``B u = G``, ``m . p = 0`` on the velocity unknowns ``free``.

    Freshly assembled systems have every velocity DOF free and ``G = 0``;
    :func:`apply_dirichlet` eliminates the boundary continuous DOFs and stores
    the lifting in ``lift``.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    F: np.ndarray
    m: np.ndarray
    space: EGSpace
    method: str
    nu: float
    rho: float | None = None
    G: np.ndarray | None = None
    free: np.ndarray | None = None
    lift: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.G is None:
            self.G = np.zeros(self.B.shape[0])
        if self.free is None:
            self.free = np.arange(self.space.n_velocity)
        if self.lift is None:
            self.lift = np.zeros(self.space.n_velocity)

    @property
    def n_velocity(self) -> int:
        return self.A.shape[0]

    def with_load(self, F: np.ndarray) -> "SaddleSystem":
        """Same matrices, new (unreduced) velocity load."""
        if self.n_velocity != self.space.n_velocity:
            raise ValueError("set the load before applying boundary conditions")
        return replace(self, F=np.asarray(F, dtype=float))


# -- helpers ----------------------------------------------------------------
def _scatter(rows, cols, vals, shape):
    rows, cols, vals = (np.asarray(a).ravel() for a in (rows, cols, vals))
    keep = (rows >= 0) & (cols >= 0)
    mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=shape).tocsr()
    mat.sum_duplicates()
    return mat


def _scatter_square(dofs, local, n):
    L = dofs.shape[1]
    rows = np.repeat(dofs[:, :, None], L, axis=2)
    cols = np.repeat(dofs[:, None, :], L, axis=1)
    return _scatter(rows, cols, local, (n, n))


def _cell_gradients(space: EGSpace) -> np.ndarray:
    """Broken gradients of the local basis, shape ``(C, d, d, n_local)``."""
    mesh = space.mesh
    d = space.dim
    G = np.zeros((mesh.num_cells, d, d, space.n_local))
    for i in range(d):
        G[:, i, :, i * (d + 1):(i + 1) * (d + 1)] = np.swapaxes(mesh.bary_grads, 1, 2)
    G[:, :, :, -1] = np.eye(d)
    return G


def _facet_jump_data(space: EGSpace, degree: int = 2):
    """Quadrature of the enrichment jumps on every facet.

    Returns ``dofs (F, 2)`` (minus side ``-1`` on the boundary) and the jump
    basis values ``vals (F, 2, nq, d)`` with the matching physical weights
    ``w (F, nq)``.
    """
    mesh = space.mesh
    rule = facet_rule(mesh.dim, degree)
    pts = rule.map(mesh.facet_corners())  # (F, nq, d)
    w = physical_weights(rule, mesh.facet_measures)
    plus, minus = mesh.cell_plus, mesh.cell_minus
    interior = minus >= 0
    vals = np.empty((mesh.num_facets, 2) + pts.shape[1:])
    vals[:, 0] = pts - mesh.cell_barycenters[plus][:, None, :]
    vals[:, 1] = -(pts - mesh.cell_barycenters[np.where(interior, minus, 0)][:, None, :])
    vals[~interior, 1] = 0.0
    dofs = np.column_stack([space.n_cont + plus, np.where(interior, space.n_cont + minus, -1)])
    return dofs, vals, w


def penalty_matrix(space: EGSpace) -> sp.csr_matrix:
    """``sum_e h_e^{-1} int_e [u].[v]`` over all facets (enrichment DOFs only)."""
    mesh = space.mesh
    dofs, vals, w = _facet_jump_data(space)
    local = np.einsum("fq,faqi,fbqi->fab", w, vals, vals) / mesh.facet_h[:, None, None]
    return _scatter_square(dofs, local, space.n_velocity)


def weak_divergence_matrix(stencil: WeakGradientStencil) -> sp.csr_matrix:
    """``B[T, j] = b_w(phi_j, 1_T) = |T| div_w phi_j|_T``."""
    space = stencil.space
    mesh = space.mesh
    vals = mesh.cell_measures[:, None] * np.trace(stencil.coeffs, axis1=1, axis2=2)
    rows = np.repeat(np.arange(mesh.num_cells)[:, None], stencil.dofs.shape[1], axis=1)
    return _scatter(rows, stencil.dofs, vals, (mesh.num_cells, space.n_velocity))


def _weak_stiffness(stencil: WeakGradientStencil) -> sp.csr_matrix:
    space = stencil.space
    C, d = space.mesh.num_cells, space.dim
    W = stencil.coeffs.reshape(C, d * d, -1)
    local = space.mesh.cell_measures[:, None, None] * np.einsum("ckl,ckm->clm", W, W)
    return _scatter_square(stencil.dofs, local, space.n_velocity)


def _mass_vector(space: EGSpace) -> np.ndarray:
    return space.mesh.cell_measures.copy()


# -- mEG --------------------------------------------------------------------
def _assemble_weak(mesh, space, nu, penalty_weight, method):
    stencil = build_stencil(space)
    A = nu * (_weak_stiffness(stencil) + penalty_weight * penalty_matrix(space))
    B = weak_divergence_matrix(stencil)
    return SaddleSystem(
        A=A.tocsr(), B=B, F=np.zeros(space.n_velocity), m=_mass_vector(space),
        space=space, method=method, nu=nu, meta={"stencil": stencil},
    )


def assemble_meg(mesh, space: EGSpace, nu: float) -> SaddleSystem:
    """Parameter-free mEG system: ``a_w`` and ``b_w`` built from weak derivatives."""
    return _assemble_weak(mesh, space, nu, 1.0, "meg")


def assemble_meg_penalized(mesh, space: EGSpace, nu: float, rho_m: float) -> SaddleSystem:
    """mEG with the jump term scaled by a hypothetical weight ``rho_m`` (penalty studies only)."""
    if rho_m <= 0:
        raise InvalidPenalty(f"rho_m must be positive, got {rho_m}")
    system = _assemble_weak(mesh, space, nu, float(rho_m), "meg")
    system.rho = float(rho_m)
    return system


# -- EG ---------------------------------------------------------------------
def _eg_facet_operators(space: EGSpace):
    """Per-facet ``{grad phi} n_e`` and ``int_e [phi]`` on the plus+minus local DOFs."""
    mesh = space.mesh
    d = space.dim
    nl = space.n_local
    plus, minus = mesh.cell_plus, mesh.cell_minus
    interior = minus >= 0
    safe_minus = np.where(interior, minus, 0)
    n = mesh.facet_normals
    Gb = _cell_gradients(space)

    dofs = np.concatenate(
        [space.cell_dofs[plus], np.where(interior[:, None], space.cell_dofs[safe_minus], -1)],
        axis=1,
    )
    w_plus = np.where(interior, 0.5, 1.0)
    w_minus = np.where(interior, 0.5, 0.0)
    T = np.concatenate(
        [
            w_plus[:, None, None] * np.einsum("fijl,fj->fil", Gb[plus], n),
            w_minus[:, None, None] * np.einsum("fijl,fj->fil", Gb[safe_minus], n),
        ],
        axis=2,
    )
    area = mesh.facet_measures
    J = np.zeros((mesh.num_facets, d, 2 * nl))
    J[:, :, nl - 1] = area[:, None] * (mesh.facet_midpoints - mesh.cell_barycenters[plus])
    J[:, :, 2 * nl - 1] = np.where(
        interior[:, None],
        -area[:, None] * (mesh.facet_midpoints - mesh.cell_barycenters[safe_minus]),
        0.0,
    )
    return dofs, T, J


def eg_divergence_matrix(space: EGSpace) -> sp.csr_matrix:
    """``b(v, q) = (div v, q) - <[v].n_e, {q}>`` for cell indicators ``q``."""
    mesh = space.mesh
    C = mesh.num_cells
    nl = space.n_local
    Gb = _cell_gradients(space)
    cell_vals = mesh.cell_measures[:, None] * np.trace(Gb, axis1=1, axis2=2)
    rows = np.repeat(np.arange(C)[:, None], nl, axis=1)
    B = _scatter(rows, space.cell_dofs, cell_vals, (C, space.n_velocity))

    dofs, _, J = _eg_facet_operators(space)
    flux = np.einsum("fil,fi->fl", J, mesh.facet_normals)  # int_e [phi].n_e
    interior = mesh.cell_minus >= 0
    w_plus = np.where(interior, 0.5, 1.0)
    rows_p = np.repeat(mesh.cell_plus[:, None], 2 * nl, axis=1)
    rows_m = np.repeat(np.where(interior, mesh.cell_minus, -1)[:, None], 2 * nl, axis=1)
    B = B + _scatter(rows_p, dofs, -w_plus[:, None] * flux, B.shape)
    B = B + _scatter(rows_m, dofs, -0.5 * flux, B.shape)
    return B.tocsr()


def assemble_eg(mesh, space: EGSpace, nu: float, rho: float) -> SaddleSystem:
    """Symmetric interior-penalty EG system with penalty parameter ``rho``."""
    if not rho > 0:
        raise InvalidPenalty(f"EG needs a positive penalty parameter, got {rho}")
    C = mesh.num_cells
    n = space.n_velocity
    Gb = _cell_gradients(space)
    flat = Gb.reshape(C, -1, space.n_local)
    vol = mesh.cell_measures[:, None, None] * np.einsum("ckl,ckm->clm", flat, flat)
    stiff = _scatter_square(space.cell_dofs, vol, n)

    dofs, T, J = _eg_facet_operators(space)
    cons = -(np.einsum("fil,fim->flm", J, T) + np.einsum("fil,fim->flm", T, J))
    consistency = _scatter_square(dofs, cons, n)

    A = nu * (stiff + consistency + rho * penalty_matrix(space))
    return SaddleSystem(
        A=A.tocsr(), B=eg_divergence_matrix(space), F=np.zeros(n), m=_mass_vector(space),
        space=space, method="eg", nu=nu, rho=float(rho),
    )


# -- loads ------------------------------------------------------------------
def _local_load(space: EGSpace, f, degree: int = LOAD_DEGREE):
    """``int_T f_i lambda_a`` as ``(C, d, d+1)`` and ``int_T f.(x - x_T)`` as ``(C,)``."""
    mesh = space.mesh
    rule = simplex_rule(mesh.dim, degree)
    pts = rule.map(mesh.cell_corners())
    w = physical_weights(rule, mesh.cell_measures)
    fx = np.asarray(f(pts), dtype=float)
    hat = np.einsum("cq,cqi,qa->cia", w, fx, rule.points)
    enr = np.einsum("cq,cqi,cqi->c", w, fx, pts - mesh.cell_barycenters[:, None, :])
    return hat, enr


def assemble_load(mesh, space: EGSpace, f, degree: int = LOAD_DEGREE) -> np.ndarray:
    """``F_i = (f, phi_i)`` with a degree-5 cell rule."""
    hat, enr = _local_load(space, f, degree)
    C = mesh.num_cells
    local = np.concatenate([hat.reshape(C, -1), enr[:, None]], axis=1)
    return np.bincount(space.cell_dofs.ravel(), local.ravel(), minlength=space.n_velocity)


# -- BDM1 reconstruction ----------------------------------------------------
def _facet_moment_basis(dim: int, mu: np.ndarray) -> np.ndarray:
    """Facet test polynomials at facet barycentric points ``mu`` (sorted vertex order)."""
    one = np.ones(mu.shape[:-1])
    if dim == 2:
        return np.stack([one, mu[..., 1] - mu[..., 0]], axis=-1)
    return np.stack([one, mu[..., 0] - 1.0 / 3.0, mu[..., 1] - 1.0 / 3.0], axis=-1)


@dataclass(frozen=True)
class ReconstructionOperator:
    """Map from EG velocities to BDM1 facet moments, plus local BDM1 bases.

    ``R`` has ``d`` rows per facet (moment ``m`` of facet ``e`` is row
    ``e*d + m``); boundary rows are empty. ``local_basis[T]`` turns the
    ``d(d+1)`` local moments of ``T`` (ordered local facet, then moment) into
    coefficients of the local velocity hat basis (order ``i*(d+1) + a``).
    """

    space: EGSpace
    R: sp.csr_matrix
    local_basis: np.ndarray  # (C, d(d+1), d(d+1))
    moment_integrals: np.ndarray  # (d, d): int_e mu_j q_m ds / |e|

    def moments(self, field) -> np.ndarray:
        vec = field.coeffs if isinstance(field, EGField) else field
        return self.R @ vec

    def local_coeffs(self, field) -> np.ndarray:
        """Nodal values of ``R v`` on every cell, shape ``(C, d+1, d)``."""
        mesh = self.space.mesh
        d = self.space.dim
        mom = self.moments(field).reshape(-1, d)[mesh.cell_facets]  # (C, d+1, d)
        c = np.einsum("cpk,ck->cp", self.local_basis, mom.reshape(mesh.num_cells, -1))
        return c.reshape(mesh.num_cells, d, d + 1).transpose(0, 2, 1)

    def divergence(self, field) -> np.ndarray:
        """Cellwise ``div(R v)`` (constant on each cell)."""
        vals = self.local_coeffs(field)
        return np.einsum("cai,cai->c", vals, self.space.mesh.bary_grads)


def build_reconstruction(mesh, space: EGSpace) -> ReconstructionOperator:
    d = mesh.dim
    C, F = mesh.num_cells, mesh.num_facets
    rule = facet_rule(d, 2)
    q = _facet_moment_basis(d, rule.points)  # (nq, d)
    S = np.einsum("q,qj,qm->jm", rule.weights, rule.points, q) / reference_measure(d - 1)

    # position of each local cell vertex within each sorted local facet (-1 if opposite)
    facet_verts = mesh.facets[mesh.cell_facets]  # (C, d+1, d)
    match = facet_verts[:, :, :, None] == mesh.cells[:, None, None, :]  # (C, k, j, a)
    on_facet = match.any(axis=2)
    pos = np.where(on_facet, match.argmax(axis=2), 0)  # (C, k, a)

    area = mesh.facet_measures[mesh.cell_facets]  # (C, k)
    normals = mesh.facet_normals[mesh.cell_facets]  # (C, k, d) global orientation
    Sv = np.where(on_facet[..., None], S[pos], 0.0)  # (C, k, a, m)
    M = np.einsum("ck,ckam,cki->ckmia", area, Sv, normals).reshape(C, d * (d + 1), d * (d + 1))
    det = np.linalg.det(M)
    scale = np.abs(M).max(axis=(1, 2)) ** M.shape[1]
    if np.any(np.abs(det) <= 1e-13 * scale):
        raise SingularLocalBDM("local BDM1 moment matrix is singular")
    local_basis = np.linalg.inv(M)

    # global moment rows: continuous hats and the averaged enrichments
    interior = mesh.cell_minus >= 0
    fidx = np.flatnonzero(interior)
    rows, cols, vals = [], [], []
    fa = mesh.facet_measures[fidx]
    n = mesh.facet_normals[fidx]
    for m in range(d):
        row = fidx * d + m
        for j in range(d):
            v = mesh.facets[fidx, j]
            for i in range(d):
                rows.append(row)
                cols.append(space.cont_dof(v, i))
                vals.append(fa * S[j, m] * n[:, i])
        corners = mesh.vertices[mesh.facets[fidx]]  # (f, d, d)
        for cell in (mesh.cell_plus[fidx], mesh.cell_minus[fidx]):
            rel = np.einsum("fji,fi->fj", corners - mesh.cell_barycenters[cell][:, None, :], n)
            rows.append(row)
            cols.append(space.enr_dof(cell))
            vals.append(0.5 * fa * (rel @ S[:, m]))
    R = _scatter(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                 (F * d, space.n_velocity))
    return ReconstructionOperator(space, R, local_basis, S)


def assemble_load_pr(mesh, space: EGSpace, f, R: ReconstructionOperator,
                     degree: int = PR_LOAD_DEGREE) -> np.ndarray:
    """``(f, R phi_i)``: integrate ``f`` against the dual BDM1 basis, then apply ``R^T``."""
    d = mesh.dim
    hat, _ = _local_load(space, f, degree)
    C = mesh.num_cells
    local = np.einsum("cpk,cp->ck", R.local_basis, hat.reshape(C, -1))  # (C, (k, m))
    idx = (mesh.cell_facets[:, :, None] * d + np.arange(d)).reshape(C, -1)
    G = np.bincount(idx.ravel(), local.ravel(), minlength=mesh.num_facets * d)
    return R.R.T @ G


# -- boundary conditions ----------------------------------------------------
def apply_dirichlet(system: SaddleSystem, g=None) -> SaddleSystem:
    """Eliminate boundary continuous DOFs, lifting the nodal values of ``g``.

    Enrichment DOFs are never eliminated; their boundary jump term stays in
    ``A``. ``g=None`` means homogeneous data.
    """
    space = system.space
    if system.n_velocity != space.n_velocity:
        raise ValueError("system already reduced")
    bdofs = space.boundary_dofs
    free = space.free_dofs
    lift = np.zeros(space.n_velocity)
    if g is not None:
        bverts = np.flatnonzero(space.mesh.boundary_vertices)
        vals = np.asarray(g(space.mesh.vertices[bverts]), dtype=float)
        lift[bdofs] = vals.T.ravel()
    A = system.A.tocsr()
    B = system.B.tocsr()
    F = system.F - A @ lift
    G = system.G - B @ lift
    return replace(
        system,
        A=A[free][:, free].tocsr(),
        B=B[:, free].tocsr(),
        F=F[free],
        G=G,
        free=free,
        lift=lift,
    )
