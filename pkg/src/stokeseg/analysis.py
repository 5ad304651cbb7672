"""Manufactured solutions, error norms and the experiment drivers.

Methods are named ``"eg"``, ``"meg"`` and ``"pr-meg"``. Every driver builds
its meshes, assembles, solves and measures errors in-process; results come
back as :class:`ConvergenceRecord` lists ready for CSV output.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import assembly as asm
from .mesh import SimplicialMesh, generate_lshape, generate_unit_cube, generate_unit_square
from .quadrature import facet_rule, physical_weights, simplex_rule
from .solver import BudgetExceeded, condition_number, solve
from .spaces import EGField, EGSpace, PressureField, integrate_cells, project_P0
from .weakcalc import build_stencil, weak_gradient

__all__ = [
    "METHODS",
    "ExactSolution",
    "ConvergenceRecord",
    "solution_vortex2d",
    "solution_cube3d",
    "solution_lshape",
    "error_norms",
    "build_system",
    "run_case",
    "convergence_study",
    "penalty_sweep",
    "robustness_sweep",
    "infsup_probe",
    "rates",
]

log = logging.getLogger(__name__)

METHODS = ("eg", "meg", "pr-meg")
CELL_DEGREE = 6
FACET_DEGREE = 4


@dataclass(frozen=True)
class ExactSolution:
    """Analytic Stokes solution; callbacks are vectorized over leading axes.

    ``p`` is the raw pressure formula; ``p_mean`` is its mean over the
    domain, subtracted before comparing with mean-zero discrete pressures.
    """

    name: str
    dim: int
    nu: float
    u: Callable
    grad_u: Callable
    p: Callable
    grad_p: Callable
    laplace_u: Callable
    p_mean: float = 0.0
    domain: str = ""

    def f(self, x):
        return -self.nu * self.laplace_u(x) + self.grad_p(x)

    def g(self, x):
        return self.u(x)

    def p0(self, x):
        return self.p(x) - self.p_mean

    def with_nu(self, nu: float) -> "ExactSolution":
        return ExactSolution(**{**{f.name: getattr(self, f.name) for f in fields(self)}, "nu": nu})


def _quartic(t):
    return t**2 * (t - 1) ** 2, 2 * t * (t - 1) * (2 * t - 1), 12 * t**2 - 12 * t + 2, 24 * t - 12


def solution_vortex2d(nu: float = 1.0) -> ExactSolution:
    """Vortex on the unit square: ``u = curl(5 x^2(x-1)^2 y^2(y-1)^2)``, ``p = 10(2x-1)(2y-1)``."""
    if nu <= 0:
        raise ValueError("nu must be positive")

    def u(x):
        gx, g1x, _, _ = _quartic(x[..., 0])
        gy, g1y, _, _ = _quartic(x[..., 1])
        return np.stack([5 * gx * g1y, -5 * g1x * gy], axis=-1)

    def grad_u(x):
        gx, g1x, g2x, _ = _quartic(x[..., 0])
        gy, g1y, g2y, _ = _quartic(x[..., 1])
        row0 = np.stack([5 * g1x * g1y, 5 * gx * g2y], axis=-1)
        row1 = np.stack([-5 * g2x * gy, -5 * g1x * g1y], axis=-1)
        return np.stack([row0, row1], axis=-2)

    def lap(x):
        gx, g1x, g2x, g3x = _quartic(x[..., 0])
        gy, g1y, g2y, g3y = _quartic(x[..., 1])
        return np.stack([5 * (g2x * g1y + gx * g3y), -5 * (g3x * gy + g1x * g2y)], axis=-1)

    def p(x):
        return 10 * (2 * x[..., 0] - 1) * (2 * x[..., 1] - 1)

    def grad_p(x):
        return np.stack([20 * (2 * x[..., 1] - 1), 20 * (2 * x[..., 0] - 1)], axis=-1)

    return ExactSolution("vortex2d", 2, nu, u, grad_u, p, grad_p, lap, 0.0, "unit square")


def solution_cube3d(nu: float = 1.0) -> ExactSolution:
    """Divergence-free trigonometric flow in the unit cube, ``p = sin(pi x) sin(pi y) sin(pi z)``."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    pi = np.pi

    def u(x):
        s = np.sin(pi * x)
        c = np.cos(pi * x)
        return np.stack(
            [
                s[..., 0] * (c[..., 1] - c[..., 2]),
                s[..., 1] * (c[..., 2] - c[..., 0]),
                s[..., 2] * (c[..., 0] - c[..., 1]),
            ],
            axis=-1,
        )

    def grad_u(x):
        s = np.sin(pi * x)
        c = np.cos(pi * x)
        sx, sy, sz = s[..., 0], s[..., 1], s[..., 2]
        cx, cy, cz = c[..., 0], c[..., 1], c[..., 2]
        rows = [
            [cx * (cy - cz), -sx * sy, sx * sz],
            [sy * sx, cy * (cz - cx), -sy * sz],
            [-sz * sx, sz * sy, cz * (cx - cy)],
        ]
        return pi * np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    def lap(x):
        return -2 * pi**2 * u(x)

    def p(x):
        return np.prod(np.sin(pi * x), axis=-1)

    def grad_p(x):
        s = np.sin(pi * x)
        c = np.cos(pi * x)
        return pi * np.stack(
            [c[..., 0] * s[..., 1] * s[..., 2], s[..., 0] * c[..., 1] * s[..., 2],
             s[..., 0] * s[..., 1] * c[..., 2]],
            axis=-1,
        )

    return ExactSolution("cube3d", 3, nu, u, grad_u, p, grad_p, lap, (2 / pi) ** 3, "unit cube")


def solution_lshape(nu: float = 1.0) -> ExactSolution:
    """``u = (sin(pi x) sin(pi y), cos(pi x) cos(pi y))``, ``p = |y|`` on the L-shaped domain."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    pi = np.pi

    def u(x):
        s, c = np.sin(pi * x), np.cos(pi * x)
        return np.stack([s[..., 0] * s[..., 1], c[..., 0] * c[..., 1]], axis=-1)

    def grad_u(x):
        s, c = np.sin(pi * x), np.cos(pi * x)
        row0 = np.stack([c[..., 0] * s[..., 1], s[..., 0] * c[..., 1]], axis=-1)
        row1 = np.stack([-s[..., 0] * c[..., 1], -c[..., 0] * s[..., 1]], axis=-1)
        return pi * np.stack([row0, row1], axis=-2)

    def lap(x):
        return -2 * pi**2 * u(x)

    def p(x):
        return np.abs(x[..., 1])

    def grad_p(x):
        return np.stack([np.zeros_like(x[..., 1]), np.sign(x[..., 1])], axis=-1)

    # mean of |y| over (-1,1)^2 minus [0,1]x[-1,0] is (1 + 1/2) / 3
    return ExactSolution("lshape", 2, nu, u, grad_u, p, grad_p, lap, 0.5, "L-shape")


SOLUTIONS = {
    "vortex2d": solution_vortex2d,
    "cube3d": solution_cube3d,
    "lshape": solution_lshape,
}

MESHES = {
    "vortex2d": generate_unit_square,
    "cube3d": generate_unit_cube,
    "lshape": generate_lshape,
}


@dataclass
class ConvergenceRecord:
    method: str
    h: float
    nu: float
    rho: float | None
    err_velocity_triple: float
    err_velocity_energy: float | None
    err_pressure_L2: float
    err_pressure_proj: float
    err_velocity_weighted: float | None = None
    rate_u: float | None = None
    rate_p: float | None = None
    cond2: float | None = None
    assemble_s: float = 0.0
    solve_s: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def err_velocity(self) -> float:
        """The velocity error reported for the method: energy norm for EG, triple norm otherwise."""
        if self.method == "eg" and self.err_velocity_energy is not None:
            return self.err_velocity_energy
        return self.err_velocity_triple


# -- error norms ------------------------------------------------------------
def _facet_traces(uh: EGField, rule):
    """Plus/minus traces of ``uh`` at facet quadrature points, ``(F, nq, d)`` each."""
    mesh = uh.space.mesh
    pts = rule.map(mesh.facet_corners())
    cont = np.einsum("qj,fjd->fqd", rule.points, uh.cont[mesh.facets])
    plus, minus = mesh.cell_plus, mesh.cell_minus
    safe = np.where(minus >= 0, minus, 0)
    c = uh.enr
    tr_plus = cont + c[plus][:, None, None] * (pts - mesh.cell_barycenters[plus][:, None, :])
    tr_minus = cont + c[safe][:, None, None] * (pts - mesh.cell_barycenters[safe][:, None, :])
    return pts, tr_plus, tr_minus


def jump_norms(uh: EGField, g=None, degree: int = FACET_DEGREE):
    """``sum_e h_e^{-1} ||[u_h]||^2`` split into interior and boundary parts.

    On boundary facets the jump is ``g - u_h`` with the full trace of ``u_h``
    (``g=None`` means zero data).
    """
    mesh = uh.space.mesh
    rule = facet_rule(mesh.dim, degree)
    w = physical_weights(rule, mesh.facet_measures) / mesh.facet_h[:, None]
    pts, tp, tm = _facet_traces(uh, rule)
    bnd = mesh.boundary_facets
    jump = tp - tm
    if g is None:
        jump[bnd] = -tp[bnd]
    else:
        jump[bnd] = np.asarray(g(pts[bnd])) - tp[bnd]
    per_facet = np.einsum("fq,fqi,fqi->f", w, jump, jump)
    return float(per_facet[~bnd].sum()), float(per_facet[bnd].sum())


def error_norms(mesh, space: EGSpace, exact: ExactSolution, uh: EGField, ph: PressureField,
                method: str = "meg", rho: float | None = None, stencil=None) -> dict:
    """Velocity and pressure errors with degree-6 cell and degree-4 facet rules.

    Returns a dict with ``err_velocity_triple`` (analytic ``grad u`` against
    ``grad_w u_h``), ``err_velocity_energy`` (broken gradient and
    ``rho``-weighted jumps, EG only), ``err_pressure_L2`` and
    ``err_pressure_proj``. When ``rho`` is given, ``err_velocity_weighted``
    is the error in the norm the penalized form is coercive in: the energy
    norm for EG, the triple norm with ``rho``-weighted jumps for mEG.
    """
    stencil = stencil or build_stencil(space)
    gw = weak_gradient(stencil, uh)
    jint, jbnd = jump_norms(uh, exact.g)
    jumps = jint + jbnd

    def grad_err(G):
        return integrate_cells(
            mesh, lambda x: ((exact.grad_u(x) - G[:, None]) ** 2).sum(axis=(-1, -2)), CELL_DEGREE
        ).sum()

    weak = grad_err(gw)
    out = {"err_velocity_triple": float(np.sqrt(weak + jumps))}
    weight = 1.0 if rho is None else rho
    if method == "eg":
        out["err_velocity_energy"] = float(np.sqrt(grad_err(uh.broken_gradient()) + weight * jumps))
        out["err_velocity_weighted"] = out["err_velocity_energy"]
    else:
        out["err_velocity_energy"] = None
        out["err_velocity_weighted"] = float(np.sqrt(weak + weight * jumps))

    pv = ph.values
    l2 = integrate_cells(mesh, lambda x: (exact.p0(x) - pv[:, None]) ** 2, CELL_DEGREE).sum()
    proj = project_P0(space, exact.p0, CELL_DEGREE).values
    out["err_pressure_L2"] = float(np.sqrt(l2))
    out["err_pressure_proj"] = float(np.sqrt(mesh.cell_measures @ (proj - pv) ** 2))
    return out


# -- single runs ------------------------------------------------------------
def build_system(method: str, mesh: SimplicialMesh, space: EGSpace, exact: ExactSolution,
                 rho: float | None = None, rho_m: float | None = None, forcing=None):
    """Assemble the unreduced system for ``method`` with load ``forcing`` (default ``exact.f``)."""
    nu = exact.nu
    f = forcing or exact.f
    if method == "eg":
        if rho is None:
            raise asm.InvalidPenalty("EG needs a penalty parameter rho")
        system = asm.assemble_eg(mesh, space, nu, rho)
        return system.with_load(asm.assemble_load(mesh, space, f))
    if rho is not None:
        raise ValueError("mEG accepts no penalty parameter")
    if rho_m is None:
        system = asm.assemble_meg(mesh, space, nu)
    else:
        system = asm.assemble_meg_penalized(mesh, space, nu, rho_m)
    if method == "meg":
        return system.with_load(asm.assemble_load(mesh, space, f))
    if method == "pr-meg":
        R = asm.build_reconstruction(mesh, space)
        system.meta["reconstruction"] = R
        return system.with_load(asm.assemble_load_pr(mesh, space, f, R))
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def run_case(method: str, mesh: SimplicialMesh, exact: ExactSolution, *, h: float | None = None,
             rho: float | None = None, rho_m: float | None = None, cond: bool = False,
             cond_budget: int | None = None):
    """Assemble, solve and measure one configuration.

    Returns ``(record, uh, ph)``.
    """
    space = EGSpace(mesh)
    t0 = time.perf_counter()
    system = build_system(method, mesh, space, exact, rho=rho, rho_m=rho_m)
    reduced = asm.apply_dirichlet(system, exact.g)
    t1 = time.perf_counter()
    uh, ph, report = solve(reduced)
    t2 = time.perf_counter()
    penalty = rho if method == "eg" else rho_m
    errs = error_norms(mesh, space, exact, uh, ph, method, penalty,
                       stencil=system.meta.get("stencil"))
    kappa = None
    if cond:
        try:
            kappa = condition_number(reduced, **({"budget": cond_budget} if cond_budget else {}))
        except BudgetExceeded:
            log.warning("condition number skipped: system too large")
    record = ConvergenceRecord(
        method=method, h=h if h is not None else mesh.h, nu=exact.nu, rho=penalty,
        cond2=kappa, assemble_s=t1 - t0, solve_s=t2 - t1,
        extra={"residual": report.residual}, **errs,
    )
    log.info("%s h=%.4g nu=%.1e: |||e_u|||=%.4e ||e_p||=%.4e", method, record.h, exact.nu,
             record.err_velocity_triple, record.err_pressure_L2)
    return record, uh, ph


def rates(errors) -> list:
    """Pairwise ``log2(e_{2h}/e_h)``; the first entry is ``None``."""
    out = [None]
    for prev, cur in zip(errors[:-1], errors[1:]):
        out.append(float(np.log2(prev / cur)) if prev > 0 and cur > 0 else None)
    return out


def convergence_study(method: str, exact: ExactSolution, levels, *, mesh_factory=None,
                      rho: float | None = None, cond: bool = False) -> list:
    """Solve on each level ``n`` (mesh size ``1/n``) and attach pairwise rates."""
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least two mesh levels")
    factory = mesh_factory or MESHES[exact.name]
    records = []
    for n in levels:
        rec, _, _ = run_case(method, factory(n), exact, h=1.0 / n, rho=rho, cond=cond)
        records.append(rec)
    for rec, ru, rp in zip(records, rates([r.err_velocity for r in records]),
                           rates([r.err_pressure_L2 for r in records])):
        rec.rate_u, rec.rate_p = ru, rp
    return records


def penalty_sweep(methods, exact: ExactSolution, mesh: SimplicialMesh, grid, *,
                  h: float | None = None, cond: bool = True) -> list:
    """Errors (and condition numbers) over a grid of penalty weights.

    EG uses ``rho`` directly; mEG uses the hypothetical weight ``rho_m`` on
    its jump term.
    """
    if any(r <= 0 for r in grid):
        raise ValueError("penalty grid must be positive")
    records = []
    for method in methods:
        for r in grid:
            if method == "eg":
                rec, _, _ = run_case("eg", mesh, exact, h=h, rho=r, cond=cond)
            else:
                rec, _, _ = run_case(method, mesh, exact, h=h, rho_m=r, cond=cond)
            records.append(rec)
    return records


def robustness_sweep(methods, exact: ExactSolution, mesh: SimplicialMesh, nu_grid, *,
                     h: float | None = None) -> list:
    """Errors over a grid of viscosities at a fixed mesh."""
    if any(nu <= 0 for nu in nu_grid):
        raise ValueError("viscosities must be positive")
    records = []
    for method in methods:
        for nu in nu_grid:
            rec, _, _ = run_case(method, mesh, exact.with_nu(nu), h=h)
            records.append(rec)
    return records


def infsup_probe(mesh: SimplicialMesh, exclude_constants: bool = True,
                 budget: int = 10_000) -> float:
    """Discrete inf-sup constant of ``b_w`` in the triple norm and L2.

    Smallest generalized singular value of ``B`` with the ``a_w`` (``nu=1``)
    inner product on homogeneous velocities and the P0 mass on pressures;
    the constant pressure is projected out unless ``exclude_constants`` is
    false (in which case the result is zero).
    """
    space = EGSpace(mesh)
    if len(space.free_dofs) > budget:
        raise BudgetExceeded(f"{len(space.free_dofs)} velocity DOFs exceed the probe budget {budget}")
    system = asm.apply_dirichlet(asm.assemble_meg(mesh, space, 1.0))
    lu = spla.splu(system.A.tocsc())
    Bt = system.B.T.toarray()
    S = system.B @ lu.solve(Bt)
    S = 0.5 * (S + S.T)
    s = 1.0 / np.sqrt(space.mesh.cell_measures)
    S = s[:, None] * S * s[None, :]
    if exclude_constants:
        z = np.sqrt(space.mesh.cell_measures)
        Q, _ = np.linalg.qr(np.column_stack([z, np.eye(len(z))[:, :-1]]))
        S = Q[:, 1:].T @ S @ Q[:, 1:]
    lam = sla.eigvalsh(S)
    return float(np.sqrt(max(lam.min(), 0.0)))
