import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stokeseg import assembly as asm
from stokeseg.analysis import (
    ConvergenceRecord,
    ExactSolution,
    build_system,
    convergence_study,
    error_norms,
    infsup_probe,
    penalty_sweep,
    rates,
    robustness_sweep,
    run_case,
    solution_cube3d,
    solution_lshape,
    solution_vortex2d,
)
from stokeseg.mesh import generate_lshape, generate_unit_cube, generate_unit_square, perturb
from stokeseg.solver import solve
from stokeseg.spaces import EGSpace, PressureField, integrate_cells, interpolate_Pi_h

SOLUTIONS = [solution_vortex2d, solution_cube3d, solution_lshape]


def sample(exact, n, rng):
    x = rng.uniform(0.01, 0.99, (n, exact.dim))
    if exact.name == "lshape":
        x = rng.uniform(-0.99, 0.99, (4 * n, 2))
        x = x[~((x[:, 0] > 0) & (x[:, 1] < 0)) & (np.abs(x[:, 1]) > 1e-3)][:n]
    return x


@pytest.mark.parametrize("factory", SOLUTIONS)
def test_divergence_free(factory):
    ex = factory(1.0)
    x = sample(ex, 1000, np.random.default_rng(0))
    div = np.trace(ex.grad_u(x), axis1=-2, axis2=-1)
    assert np.abs(div).max() < 1e-12


@pytest.mark.parametrize("factory", SOLUTIONS)
@pytest.mark.parametrize("nu", [1.0, 1e-3])
def test_forcing_matches_finite_differences(factory, nu):
    ex = factory(nu)
    x = sample(ex, 20, np.random.default_rng(1))
    eps = 1e-5
    d = ex.dim
    lap = np.zeros((len(x), d))
    grad_p = np.zeros((len(x), d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = eps
        lap += (ex.u(x + e) - 2 * ex.u(x) + ex.u(x - e)) / eps**2
        grad_p[:, j] = (ex.p(x + e) - ex.p(x - e)) / (2 * eps)
    np.testing.assert_allclose(ex.f(x), -nu * lap + grad_p, atol=1e-5 * max(1.0, np.abs(ex.f(x)).max()))


@pytest.mark.parametrize("factory", SOLUTIONS)
def test_gradient_matches_finite_differences(factory):
    ex = factory(1.0)
    x = sample(ex, 20, np.random.default_rng(2))
    eps = 1e-6
    for j in range(ex.dim):
        e = np.zeros(ex.dim)
        e[j] = eps
        np.testing.assert_allclose(ex.grad_u(x)[..., j], (ex.u(x + e) - ex.u(x - e)) / (2 * eps), atol=1e-7)


def test_vortex_values():
    ex = solution_vortex2d(1.0)
    np.testing.assert_allclose(ex.u(np.array([0.5, 0.5])), [0, 0], atol=1e-15)
    mesh = generate_unit_square(8)
    assert abs(integrate_cells(mesh, ex.p, 6).sum()) < 1e-12
    assert ex.p_mean == 0.0
    x = np.array([0.3, 0.7])
    assert ex.u(x)[0] == pytest.approx(10 * 0.09 * 0.49 * 0.7 * -0.3 * 0.4)


def test_cube_values():
    ex = solution_cube3d(1.0)
    assert ex.p_mean == pytest.approx((2 / np.pi) ** 3)
    mesh = generate_unit_cube(4)
    assert integrate_cells(mesh, ex.p, 6).sum() == pytest.approx((2 / np.pi) ** 3, rel=2e-3)
    rng = np.random.default_rng(3)
    yz = rng.uniform(0, 1, (10, 2))
    x = np.column_stack([np.zeros(10), yz])
    y, z = yz.T
    expected = np.sin(np.pi * y) * np.cos(np.pi * z) - np.sin(np.pi * y)
    np.testing.assert_allclose(ex.u(x)[:, 0], 0, atol=1e-15)
    np.testing.assert_allclose(ex.u(x)[:, 1], expected, atol=1e-14)


def test_lshape_values():
    ex = solution_lshape(1.0)
    mesh = generate_lshape(4)
    assert integrate_cells(mesh, ex.p, 6).sum() / 3 == pytest.approx(ex.p_mean, rel=1e-12)
    bx = mesh.vertices[mesh.boundary_vertices]
    assert np.abs(ex.g(bx)).max() > 0.5


def test_with_nu_changes_only_forcing():
    a, b = solution_vortex2d(1.0), solution_vortex2d(1.0).with_nu(1e-3)
    x = np.array([[0.2, 0.6]])
    np.testing.assert_array_equal(a.u(x), b.u(x))
    assert b.nu == 1e-3 and not np.allclose(a.f(x), b.f(x))


def linear_solution():
    M = np.array([[1.0, 2.0], [3.0, -1.0]])  # trace 0

    return ExactSolution(
        name="vortex2d", dim=2, nu=1.0,
        u=lambda x: x @ M.T,
        grad_u=lambda x: np.broadcast_to(M, x.shape[:-1] + (2, 2)),
        p=lambda x: x[..., 0] - 0.5,
        grad_p=lambda x: np.broadcast_to([1.0, 0.0], x.shape),
        laplace_u=lambda x: np.zeros(x.shape),
        p_mean=0.0, domain="unit square",
    )


def test_error_norms_vanish_on_linear_interpolant():
    ex = linear_solution()
    mesh = perturb(generate_unit_square(4), 0.3, seed=0)
    sp = EGSpace(mesh)
    uh = interpolate_Pi_h(sp, ex.u, ex.grad_u)
    ph = PressureField(sp, np.zeros(sp.n_pres))
    errs = error_norms(mesh, sp, ex, uh, ph, "meg")
    assert errs["err_velocity_triple"] < 1e-11
    errs_eg = error_norms(mesh, sp, ex, uh, ph, "eg", rho=3.0)
    assert errs_eg["err_velocity_energy"] < 1e-11


def test_interpolant_error_is_first_order():
    ex = solution_vortex2d(1.0)
    errs = []
    for n in (8, 16, 32):
        mesh = generate_unit_square(n)
        sp = EGSpace(mesh)
        uh = interpolate_Pi_h(sp, ex.u, ex.grad_u)
        errs.append(error_norms(mesh, sp, ex, uh, PressureField(sp, np.zeros(sp.n_pres)))["err_velocity_triple"])
    r = rates(errs)
    assert all(0.9 < x < 1.2 for x in r[1:])


def test_pressure_norms():
    ex = solution_vortex2d(1.0)
    mesh = generate_unit_square(8)
    sp = EGSpace(mesh)
    from stokeseg.spaces import project_P0
    ph = project_P0(sp, ex.p)
    uh = interpolate_Pi_h(sp, ex.u, ex.grad_u)
    errs = error_norms(mesh, sp, ex, uh, ph)
    assert errs["err_pressure_proj"] < 1e-12
    assert errs["err_pressure_L2"] > 0.1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1e-8, 1e3), min_size=2, max_size=6))
def test_rates_bookkeeping(errors):
    r = rates(errors)
    assert r[0] is None
    for prev, cur, rate in zip(errors[:-1], errors[1:], r[1:]):
        assert rate == pytest.approx(np.log2(prev / cur), abs=1e-12)


def test_build_system_penalty_rules():
    mesh = generate_unit_square(2)
    sp = EGSpace(mesh)
    ex = solution_vortex2d(1.0)
    with pytest.raises(ValueError, match="mEG accepts no penalty parameter"):
        build_system("meg", mesh, sp, ex, rho=1.0)
    with pytest.raises(asm.InvalidPenalty):
        build_system("eg", mesh, sp, ex)
    with pytest.raises(ValueError):
        build_system("dg", mesh, sp, ex)


def test_convergence_study_records():
    recs = convergence_study("meg", solution_vortex2d(1.0), [4, 8])
    assert [r.h for r in recs] == [0.25, 0.125]
    assert recs[0].rate_u is None and recs[1].rate_u > 0.8
    assert recs[1].rate_u == pytest.approx(np.log2(recs[0].err_velocity_triple / recs[1].err_velocity_triple))
    with pytest.raises(ValueError):
        convergence_study("meg", solution_vortex2d(1.0), [4])


def test_record_reports_energy_norm_for_eg():
    rec, _, _ = run_case("eg", generate_unit_square(4), solution_vortex2d(1.0), rho=5.0)
    assert rec.err_velocity == rec.err_velocity_energy == rec.err_velocity_weighted
    rec2, _, _ = run_case("meg", generate_unit_square(4), solution_vortex2d(1.0))
    assert rec2.err_velocity == rec2.err_velocity_triple == rec2.err_velocity_weighted
    assert isinstance(rec2, ConvergenceRecord) and rec2.err_velocity_energy is None


def test_penalty_sweep_weighted_norm():
    recs = penalty_sweep(["meg"], solution_vortex2d(1.0), generate_unit_square(4), [0.5, 2.0], cond=False)
    for r in recs:
        assert r.rho in (0.5, 2.0)
        if r.rho < 1:
            assert r.err_velocity_weighted < r.err_velocity_triple
        else:
            assert r.err_velocity_weighted > r.err_velocity_triple
    with pytest.raises(ValueError):
        penalty_sweep(["eg"], solution_vortex2d(1.0), generate_unit_square(2), [0.0])


def test_pressure_robust_velocity_independent_of_viscosity():
    recs = robustness_sweep(["meg", "pr-meg"], solution_vortex2d(1.0), generate_unit_square(8), [1e-1, 1e-3])
    meg = [r for r in recs if r.method == "meg"]
    pr = [r for r in recs if r.method == "pr-meg"]
    assert meg[1].err_velocity_triple / meg[0].err_velocity_triple == pytest.approx(100, rel=0.05)
    assert pr[1].err_velocity_triple == pytest.approx(pr[0].err_velocity_triple, rel=1e-6)
    assert pr[1].err_pressure_proj / pr[0].err_pressure_proj == pytest.approx(1e-2, rel=1e-3)


def test_gradient_forcing_absorbed_by_pressure():
    mesh = generate_unit_square(8)
    sp = EGSpace(mesh)
    ex = solution_vortex2d(1e-2)
    gphi = lambda x: np.stack([2 * x[..., 0] * x[..., 1] ** 3, 3 * x[..., 0] ** 2 * x[..., 1] ** 2], -1)
    for method, bound in (("pr-meg", 1e-10), ("meg", None)):
        u0, p0, _ = solve(asm.apply_dirichlet(build_system(method, mesh, sp, ex), ex.g))
        u1, p1, _ = solve(asm.apply_dirichlet(
            build_system(method, mesh, sp, ex, forcing=lambda x: ex.f(x) + gphi(x)), ex.g))
        change = np.linalg.norm(u1.coeffs - u0.coeffs) / np.linalg.norm(u0.coeffs)
        if bound:
            assert change < bound
            # the pressure absorbs the cell means of phi = x^2 y^3 (up to a constant)
            from stokeseg.spaces import project_P0
            dp = project_P0(sp, lambda x: x[..., 0] ** 2 * x[..., 1] ** 3).demeaned().values
            np.testing.assert_allclose(p1.values - p0.values, dp, atol=1e-9)
        else:
            assert change > 1e-3


def test_infsup_probe():
    base = infsup_probe(generate_unit_square(4))
    assert base > 0.1
    assert infsup_probe(generate_unit_square(4), exclude_constants=False) < 1e-6
    from stokeseg.solver import BudgetExceeded
    with pytest.raises(BudgetExceeded):
        infsup_probe(generate_unit_square(8), budget=10)


def test_infsup_dense_oracle():
    # generalized singular values sup_v b(v,q)/(|||v||| ||q||) by dense linear algebra
    import scipy.linalg as sla
    mesh = generate_unit_square(4)
    sp = EGSpace(mesh)
    system = asm.apply_dirichlet(asm.assemble_meg(mesh, sp, 1.0))
    A = system.A.toarray()
    B = system.B.toarray()
    M = np.diag(mesh.cell_measures)
    S = B @ np.linalg.solve(A, B.T)
    ev = sla.eigh(S, M, eigvals_only=True)
    # drop the constant pressure mode
    assert np.sqrt(np.sort(ev)[1]) == pytest.approx(infsup_probe(mesh), rel=1e-8)


def test_lshape_run():
    # the corner singularity caps the rate, but refinement must still help
    coarse, _, _ = run_case("meg", generate_lshape(4), solution_lshape(1.0), h=0.25)
    fine, _, _ = run_case("meg", generate_lshape(8), solution_lshape(1.0), h=0.125)
    assert fine.err_velocity_triple < 0.9 * coarse.err_velocity_triple
    assert fine.err_pressure_L2 < coarse.err_pressure_L2
