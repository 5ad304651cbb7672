"""Direct solution of the saddle-point systems and condition-number estimates.

The mean-zero pressure constraint is imposed with one Lagrange multiplier::

    [  A   -B^T  0 ] [u]   [ F ]
    [ -B    0    m ] [p] = [-G ]
    [  0    m^T  0 ] [l]   [ 0 ]

which keeps the matrix symmetric. Two-dimensional and small systems are
factorized directly (sparse LU plus iterative refinement). Large
three-dimensional systems fill in badly under LU, so they go through MINRES
with a block-diagonal preconditioner: one smoothed-aggregation V-cycle on
``A``, the inverse pressure mass scaled by ``nu`` on the pressure block, and
the matching scalar for the multiplier.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SaddleSystem
from .spaces import EGField, PressureField

__all__ = [
    "SolverError",
    "SingularSystem",
    "NonConvergence",
    "BudgetExceeded",
    "SolveReport",
    "augmented_matrix",
    "solve",
    "condition_number",
    "matrix_condition_number",
]

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
CONDITION_BUDGET = 200_000
DENSE_LIMIT = 2_500
# 3D systems above this size are solved iteratively under method="auto"
ITERATIVE_MIN_SIZE = 5_000
MINRES_MAXITER = 5_000


class SolverError(RuntimeError):
    pass


class SingularSystem(SolverError):
    pass


class NonConvergence(SolverError):
    pass


class BudgetExceeded(SolverError):
    pass


@dataclass
class SolveReport:
    residual: float
    refinements: int
    multiplier: float
    size: int
    method: str = "direct"
    iterations: int = 0


def augmented_matrix(system: SaddleSystem) -> sp.csc_matrix:
    m = sp.csr_matrix(system.m.reshape(-1, 1))
    K = sp.bmat(
        [
            [system.A, -system.B.T, None],
            [-system.B, None, m],
            [None, m.T, None],
        ],
        format="csc",
    )
    return K


def _rhs(system: SaddleSystem) -> np.ndarray:
    return np.concatenate([system.F, -system.G, [0.0]])


def _factorize(K):
    try:
        with np.errstate(all="raise"):
            lu = spla.splu(K, permc_spec="COLAMD")
    except (RuntimeError, FloatingPointError) as exc:
        raise SingularSystem(f"factorization failed: {exc}") from exc
    diag = np.abs(lu.U.diagonal())
    if not np.all(np.isfinite(diag)) or diag.min() <= 1e-14 * diag.max():
        raise SingularSystem("factorization produced a (numerically) zero pivot")
    return lu


def _solve_direct(K, b, max_refinements):
    lu = _factorize(K)
    x = lu.solve(b)
    bnorm = max(np.linalg.norm(b), np.finfo(float).tiny)
    res = np.linalg.norm(b - K @ x) / bnorm
    # refine while it pays off: cancellation between large gradient loads and
    # the pressure leaves digits on the table even when the residual is small
    steps = 0
    while steps < max_refinements:
        x_new = x + lu.solve(b - K @ x)
        res_new = np.linalg.norm(b - K @ x_new) / bnorm
        if not res_new < 0.5 * res:
            break
        x, res = x_new, res_new
        steps += 1
    return x, res, steps


def _block_preconditioner(system: SaddleSystem):
    A = system.A.tocsr()
    nv = A.shape[0]
    ml = pyamg.smoothed_aggregation_solver(A, symmetry="symmetric")
    # Schur complement B A^{-1} B^T is spectrally close to M_p / nu
    mass = system.m / system.nu
    corner = float(system.m @ (system.m / mass))
    n = nv + len(mass) + 1

    def apply(x):
        y = np.empty_like(x)
        y[:nv] = ml.solve(x[:nv], maxiter=1, cycle="V", tol=1e-30)
        y[nv:-1] = x[nv:-1] / mass
        y[-1] = x[-1] / corner
        return y

    return spla.LinearOperator((n, n), matvec=apply, dtype=float)


def _solve_iterative(system, K, b, restarts=3):
    M = _block_preconditioner(system)
    bnorm = max(np.linalg.norm(b), np.finfo(float).tiny)
    x = np.zeros_like(b)
    count = [0]

    def tick(_):
        count[0] += 1

    res = 1.0
    for _ in range(restarts + 1):
        x, info = spla.minres(K, b, x0=x, M=M, rtol=1e-13, maxiter=MINRES_MAXITER, callback=tick)
        res = np.linalg.norm(b - K @ x) / bnorm
        if not np.isfinite(res) or res <= 0.1 * RESIDUAL_TOL:
            break
    return x, res, count[0]


def _choose_method(system: SaddleSystem, size: int) -> str:
    if system.space.dim == 2 or size <= ITERATIVE_MIN_SIZE:
        return "direct"
    return "iterative"


def solve(system: SaddleSystem, max_refinements: int = 3, method: str = "auto"):
    """Solve the (Dirichlet-reduced) system.

    ``method`` is ``"direct"``, ``"iterative"`` or ``"auto"``. Returns
    ``(velocity, pressure, report)``; the velocity includes the boundary
    lifting and the pressure has zero mean.
    """
    if method not in ("auto", "direct", "iterative"):
        raise ValueError(f"unknown solver method {method!r}")
    K = augmented_matrix(system)
    b = _rhs(system)
    if method == "auto":
        method = _choose_method(system, K.shape[0])
    steps = iterations = 0
    if method == "iterative":
        x, res, iterations = _solve_iterative(system, K.tocsr(), b)
        if not res <= RESIDUAL_TOL:
            log.warning("MINRES stalled at residual %.2e; falling back to LU", res)
            method = "direct"
    if method == "direct":
        x, res, steps = _solve_direct(K, b, max_refinements)
    if not np.isfinite(res):
        raise SingularSystem("solution is not finite")
    if res > RESIDUAL_TOL:
        raise NonConvergence(f"relative residual {res:.2e} after {steps} refinement steps")

    space = system.space
    nu_free = system.n_velocity
    coeffs = system.lift.copy()
    coeffs[system.free] += x[:nu_free]
    p = x[nu_free:nu_free + space.n_pres]
    pressure = PressureField(space, p).demeaned()
    report = SolveReport(residual=float(res), refinements=steps, multiplier=float(x[-1]),
                         size=K.shape[0], method=method, iterations=iterations)
    log.debug("solved %d unknowns (%s), residual %.2e", K.shape[0], method, res)
    return EGField(space, coeffs), pressure, report


def matrix_condition_number(K, budget: int = CONDITION_BUDGET, tol: float = 1e-8) -> float:
    """2-norm condition number of a symmetric nonsingular matrix.

    Dense eigenvalues for small matrices; otherwise Lanczos iterations on
    ``K`` (largest |eigenvalue|) and on ``K^{-1}`` through a sparse LU
    factorization (smallest |eigenvalue|).
    """
    n = K.shape[0]
    if n > budget:
        raise BudgetExceeded(f"{n} unknowns exceed the condition-number budget {budget}")
    if n <= DENSE_LIMIT:
        ev = np.abs(np.linalg.eigvalsh(K.toarray() if sp.issparse(K) else np.asarray(K)))
        if ev.min() == 0.0:
            return np.inf
        return float(ev.max() / ev.min())
    K = sp.csc_matrix(K)
    lu = _factorize(K)
    big = spla.eigsh(K, k=1, which="LM", tol=tol, return_eigenvectors=False)
    inv = spla.LinearOperator(K.shape, matvec=lu.solve, dtype=float)
    small = spla.eigsh(inv, k=1, which="LM", tol=tol, return_eigenvectors=False)
    return float(abs(big[0]) * abs(small[0]))


def condition_number(system: SaddleSystem, budget: int = CONDITION_BUDGET) -> float:
    """Condition number of the full augmented matrix (after Dirichlet reduction)."""
    return matrix_condition_number(augmented_matrix(system), budget)
