from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from stokeseg import assembly as asm
from stokeseg import solver
from stokeseg.analysis import build_system, solution_cube3d, solution_vortex2d
from stokeseg.mesh import generate_unit_cube, generate_unit_square
from stokeseg.solver import (
    BudgetExceeded,
    SingularSystem,
    augmented_matrix,
    condition_number,
    matrix_condition_number,
    solve,
)
from stokeseg.spaces import EGSpace


def reduced_meg(n=4, nu=1.0, exact=None):
    mesh = generate_unit_square(n)
    space = EGSpace(mesh)
    exact = exact or solution_vortex2d(nu)
    return asm.apply_dirichlet(build_system("meg", mesh, space, exact), exact.g)


def test_zero_data_gives_zero_solution():
    mesh = generate_unit_square(4)
    sp_ = EGSpace(mesh)
    system = asm.apply_dirichlet(asm.assemble_meg(mesh, sp_, 1.0))
    u, p, rep = solve(system)
    assert np.all(u.coeffs == 0) and np.all(p.values == 0)
    assert rep.residual == 0.0


def test_residual_and_constraints():
    system = reduced_meg()
    u, p, rep = solve(system)
    assert rep.residual <= solver.RESIDUAL_TOL
    assert abs(p.mean()) < 1e-13
    assert abs(rep.multiplier) < 1e-10
    x = np.concatenate([u.coeffs[system.free] - system.lift[system.free], p.values, [rep.multiplier]])
    K = augmented_matrix(system)
    b = np.concatenate([system.F, -system.G, [0.0]])
    assert np.linalg.norm(K @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_discrete_divergence_free():
    system = reduced_meg(6)
    u, _, _ = solve(system)
    from stokeseg.weakcalc import build_stencil, weak_divergence
    assert np.abs(weak_divergence(build_stencil(u.space), u)).max() < 1e-10


def test_linearity_in_the_load():
    system = reduced_meg()
    rng = np.random.default_rng(0)
    F1, F2 = rng.standard_normal((2, system.n_velocity))
    u1, p1, _ = solve(replace(system, F=F1, G=0 * system.G))
    u2, p2, _ = solve(replace(system, F=F2, G=0 * system.G))
    u3, p3, _ = solve(replace(system, F=2 * F1 - F2, G=0 * system.G))
    np.testing.assert_allclose(u3.coeffs, 2 * u1.coeffs - u2.coeffs, atol=1e-10)
    np.testing.assert_allclose(p3.values, 2 * p1.values - p2.values, atol=1e-10)


def test_iterative_and_direct_agree_in_3d():
    mesh = generate_unit_cube(3)
    space = EGSpace(mesh)
    ex = solution_cube3d(1.0)
    system = asm.apply_dirichlet(build_system("meg", mesh, space, ex), ex.g)
    ud, pd_, rd = solve(system, method="direct")
    ui, pi, ri = solve(system, method="iterative")
    assert rd.method == "direct" and ri.method == "iterative" and ri.iterations > 0
    assert ri.residual <= solver.RESIDUAL_TOL
    np.testing.assert_allclose(ui.coeffs, ud.coeffs, atol=1e-8 * np.abs(ud.coeffs).max())
    np.testing.assert_allclose(pi.values, pd_.values, atol=1e-8 * np.abs(pd_.values).max())


def test_auto_method_choice(monkeypatch):
    system = reduced_meg(2)
    assert solve(system)[2].method == "direct"
    mesh = generate_unit_cube(2)
    space = EGSpace(mesh)
    s3 = asm.apply_dirichlet(asm.assemble_meg(mesh, space, 1.0))
    monkeypatch.setattr(solver, "ITERATIVE_MIN_SIZE", 10)
    assert solve(s3)[2].method == "iterative"


def test_unknown_method():
    with pytest.raises(ValueError):
        solve(reduced_meg(2), method="cg")


def test_singular_system_detected():
    system = reduced_meg(3)
    zero = sp.csr_matrix(system.A.shape)
    with pytest.raises(SingularSystem):
        solve(replace(system, A=zero))


def test_condition_number_of_diagonal():
    K = sp.diags([1.0, -4.0, 0.5, 2.0])
    assert matrix_condition_number(K) == pytest.approx(8.0)


def test_condition_number_lanczos_matches_dense(monkeypatch):
    system = reduced_meg(4)
    dense = condition_number(system)
    monkeypatch.setattr(solver, "DENSE_LIMIT", 10)
    lanczos = condition_number(system)
    assert lanczos == pytest.approx(dense, rel=1e-6)


def test_condition_budget():
    with pytest.raises(BudgetExceeded):
        matrix_condition_number(sp.identity(50), budget=10)


def test_condition_number_grows_with_refinement():
    k1 = condition_number(reduced_meg(4))
    k2 = condition_number(reduced_meg(8))
    assert k2 > 2 * k1
