import numpy as np
import pytest

from ellinv.bodies import box, orthant
from ellinv.conditions import SystemCoefficients
from ellinv.fdsolve import (BoxGrid, GridField, PicardConfig, SolveError,
                            SolverConfig, assemble_linear, assemble_matrix,
                            audit_invariance, boundary_rhs,
                            random_boundary_field, search_boundary_violation,
                            solve_dirichlet, solve_linear, solve_quasilinear)


def scalar_laplacian(n=2):
    tensor = np.zeros((n, n, 1, 1))
    for j in range(n):
        tensor[j, j, 0, 0] = 1.0
    return SystemCoefficients(n, 1, tensor)


def unit_grid(shape):
    n = len(shape)
    return BoxGrid(np.zeros(n), np.ones(n), shape)


def field_from(grid, fn, m=1):
    return GridField.from_function(grid, fn, m)


def test_grid_validation_and_geometry():
    grid = BoxGrid(np.zeros(2), np.array([2.0, 1.0]), (5, 3))
    assert np.allclose(grid.spacing, [0.5, 0.5])
    assert grid.num_nodes == 15
    assert len(grid.boundary_flat()) + len(grid.interior_flat()) == 15
    assert len(grid.interior_flat()) == 3  # (5-2)*(3-2)
    with pytest.raises(ValueError):
        BoxGrid(np.zeros(2), np.ones(2), (2, 5))
    with pytest.raises(ValueError):
        BoxGrid(np.zeros(4), np.ones(4), (3, 3, 3, 3))
    with pytest.raises(ValueError):
        BoxGrid(np.ones(2), np.zeros(2), (5, 5))


def test_gradient_exact_on_affine():
    grid = unit_grid((9, 7))
    fld = field_from(grid, lambda x: [2.0 * x[0] - 3.0 * x[1] + 1.0,
                                      x[0] + 4.0 * x[1]], m=2)
    eta = fld.gradient()
    assert np.allclose(eta[:, 0], 2.0, atol=1e-12)
    assert np.allclose(eta[:, 1], -3.0, atol=1e-12)
    assert np.allclose(eta[:, 2], 1.0, atol=1e-12)
    assert np.allclose(eta[:, 3], 4.0, atol=1e-12)


def test_stencil_weights_match_divided_differences():
    # pure Laplacian: -2/h^2 on the diagonal per axis, 1/h^2 on neighbors;
    # a mixed coefficient a12 contributes +-2*a12/(4 h1 h2) on the diagonals
    grid = unit_grid((5, 5))
    h = grid.spacing[0]
    tensor = np.zeros((2, 2, 1, 1))
    tensor[0, 0, 0, 0] = tensor[1, 1, 0, 0] = 1.0
    tensor[0, 1, 0, 0] = tensor[1, 0, 0, 0] = 0.5
    mat = assemble_matrix(SystemCoefficients(2, 1, tensor), grid).matrix.tocsr()
    center = np.ravel_multi_index((2, 2), grid.shape)
    row = mat.getrow(center).toarray().ravel()
    idx = lambda i, j: np.ravel_multi_index((i, j), grid.shape)
    assert row[center] == pytest.approx(-4.0 / h ** 2)
    for i, j in ((1, 2), (3, 2), (2, 1), (2, 3)):
        assert row[idx(i, j)] == pytest.approx(1.0 / h ** 2)
    assert row[idx(3, 3)] == pytest.approx(1.0 / (4.0 * h ** 2))
    assert row[idx(1, 1)] == pytest.approx(1.0 / (4.0 * h ** 2))
    assert row[idx(3, 1)] == pytest.approx(-1.0 / (4.0 * h ** 2))
    assert row[idx(1, 3)] == pytest.approx(-1.0 / (4.0 * h ** 2))
    assert row.sum() == pytest.approx(0.0, abs=1e-12)


def test_boundary_rows_are_identity():
    grid = unit_grid((5, 5))
    mat = assemble_matrix(scalar_laplacian(), grid).matrix.tocsr()
    for flat in grid.boundary_flat()[:5]:
        row = mat.getrow(int(flat)).toarray().ravel()
        assert row[int(flat)] == 1.0
        assert np.count_nonzero(row) == 1


def test_affine_fields_reproduced_exactly():
    grid = unit_grid((9, 9))
    exact = field_from(grid, lambda x: [1.0 + 2.0 * x[0] - x[1]])
    sol, rep = solve_dirichlet(scalar_laplacian(), grid, exact,
                               SolverConfig(method="direct"))
    assert np.abs(sol.values - exact.values).max() <= 1e-12
    assert rep.method == "direct"


def test_harmonic_quadratic_reproduced():
    grid = unit_grid((17, 17))
    exact = field_from(grid, lambda x: [x[0] ** 2 - x[1] ** 2])
    sol, _ = solve_dirichlet(scalar_laplacian(), grid, exact,
                             SolverConfig(method="direct"))
    assert np.abs(sol.values - exact.values).max() <= 1e-10


def test_coupled_factorized_quadratics_reproduced():
    # A = b . diag(L1, L2) with L1 the Laplacian and L2 = dxx + 2 dyy;
    # null solutions of the diagonal operators solve the coupled system
    forms = np.array([[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 2.0]]])
    mixing = np.array([[1.0, 1.0], [0.0, 1.0]])
    tensor = np.einsum("ps,sjk->jkps", mixing, forms)
    coeffs = SystemCoefficients(2, 2, tensor)
    grid = unit_grid((17, 17))
    exact = field_from(grid, lambda x: [x[0] ** 2 - x[1] ** 2,
                                        2.0 * x[0] ** 2 - x[1] ** 2], m=2)
    sol, _ = solve_dirichlet(coeffs, grid, exact, SolverConfig(method="direct"))
    assert np.abs(sol.values - exact.values).max() <= 1e-9


def quartic_error(coeffs, exact_fn, shape, m=1):
    grid = unit_grid(shape)
    exact = field_from(grid, exact_fn, m=m)
    sol, _ = solve_dirichlet(coeffs, grid, exact, SolverConfig(method="direct"))
    return float(np.abs(sol.values - exact.values).max())


def test_second_order_convergence_laplacian():
    # Re((x + i y)^4) is harmonic and quartic, so errors scale like h^2
    fn = lambda x: [x[0] ** 4 - 6.0 * x[0] ** 2 * x[1] ** 2 + x[1] ** 4]
    e1 = quartic_error(scalar_laplacian(), fn, (9, 9))
    e2 = quartic_error(scalar_laplacian(), fn, (17, 17))
    assert 3.2 <= e1 / e2 <= 4.8


def test_second_order_convergence_with_cross_terms():
    # tau solves tau^2 + 0.6 tau + 1 = 0 for A = [[1, .3], [.3, 1]];
    # Re((x + tau y)^4) is a null solution with a genuine mixed derivative
    tau = complex(-0.3, np.sqrt(1.0 - 0.09))
    fn = lambda x: [((x[0] + tau * x[1]) ** 4).real]
    tensor = np.zeros((2, 2, 1, 1))
    tensor[0, 0, 0, 0] = tensor[1, 1, 0, 0] = 1.0
    tensor[0, 1, 0, 0] = tensor[1, 0, 0, 0] = 0.3
    coeffs = SystemCoefficients(2, 1, tensor)
    e1 = quartic_error(coeffs, fn, (9, 9))
    e2 = quartic_error(coeffs, fn, (17, 17))
    assert 3.2 <= e1 / e2 <= 4.8


def test_second_order_convergence_first_order_term():
    # u = exp(-x) solves u'' + u' = 0 extended constantly in y
    tensor = np.zeros((2, 2, 1, 1))
    tensor[0, 0, 0, 0] = tensor[1, 1, 0, 0] = 1.0
    first = np.zeros((2, 1, 1))
    first[0, 0, 0] = 1.0
    coeffs = SystemCoefficients(2, 1, tensor, first)
    fn = lambda x: [np.exp(-x[0])]
    e1 = quartic_error(coeffs, fn, (9, 9))
    e2 = quartic_error(coeffs, fn, (17, 17))
    assert 3.2 <= e1 / e2 <= 4.8


def test_three_dimensional_quadratic_reproduced():
    grid = unit_grid((7, 7, 7))
    exact = field_from(grid, lambda x: [x[0] ** 2 + x[1] ** 2 - 2.0 * x[2] ** 2])
    sol, _ = solve_dirichlet(scalar_laplacian(3), grid, exact,
                             SolverConfig(method="direct"))
    assert np.abs(sol.values - exact.values).max() <= 1e-10


def test_iterative_methods_agree_with_direct():
    grid = unit_grid((17, 17))
    exact = field_from(grid, lambda x: [np.sin(np.pi * x[0]) * x[1]])
    problem = assemble_linear(scalar_laplacian(), grid, exact)
    direct, _ = solve_linear(problem, SolverConfig(method="direct"))
    for method in ("gmres", "bicgstab"):
        it, rep = solve_linear(problem, SolverConfig(method=method))
        assert np.abs(it.values - direct.values).max() <= 1e-6
        assert rep.iterations > 0
        assert rep.residual <= 1e-8
    with pytest.raises(ValueError):
        solve_linear(problem, SolverConfig(method="cholesky"))


def test_iterative_nonconvergence_raises():
    grid = unit_grid((33, 33))
    exact = field_from(grid, lambda x: [np.sin(3 * np.pi * x[0]) * x[1] ** 2])
    problem = assemble_linear(scalar_laplacian(), grid, exact)
    with pytest.raises(SolveError) as err:
        solve_linear(problem, SolverConfig(method="gmres", maxiter=1,
                                           restart=2, rtol=1e-14))
    assert err.value.residual is not None


def test_quasilinear_picard_converges_to_fixed_point():
    def quasi(x, eta):
        tensor = np.zeros((2, 2, 1, 1))
        factor = 1.0 + 0.5 * min(float(eta @ eta), 10.0)
        tensor[0, 0, 0, 0] = tensor[1, 1, 0, 0] = factor
        return tensor

    base = scalar_laplacian().second_order
    coeffs = SystemCoefficients(2, 1, base, quasilinear=quasi)
    grid = unit_grid((17, 17))
    bnd = field_from(grid, lambda x: [0.3 * np.sin(np.pi * x[0]) * x[1]])
    sol, rep = solve_quasilinear(coeffs, grid, bnd,
                                 PicardConfig(solver=SolverConfig(method="direct")))
    assert rep.picard_iterations is not None
    assert rep.picard_residual <= 1e-8
    # fixed point: re-solving the linearization at the converged gradient
    # reproduces the iterate up to the damping-scaled tolerance
    from ellinv.fdsolve import LinearProblem, _assemble_from_samples, _interior_samples
    interior = grid.interior_flat()
    eta = sol.gradient()[interior]
    _, a2, a1 = _interior_samples(coeffs, grid, eta)
    system = _assemble_from_samples(grid, 1, interior, a2, a1)
    relin, _ = solve_linear(LinearProblem(system, boundary_rhs(grid, bnd)),
                            SolverConfig(method="direct"))
    assert np.abs(relin.values - sol.values).max() <= 1e-6

    with pytest.raises(ValueError):
        solve_quasilinear(SystemCoefficients(2, 1, base), grid, bnd)


def test_quasilinear_scalar_factor_keeps_harmonic_solution():
    # with B = (1 + |eta|^2) I the operator is a positive multiple of the
    # Laplacian at every point, so harmonic boundary data yields the same
    # solution as the linear problem
    def quasi(x, eta):
        tensor = np.zeros((2, 2, 1, 1))
        factor = 1.0 + float(eta @ eta)
        tensor[0, 0, 0, 0] = tensor[1, 1, 0, 0] = factor
        return tensor

    base = scalar_laplacian().second_order
    coeffs = SystemCoefficients(2, 1, base, quasilinear=quasi)
    grid = unit_grid((17, 17))
    exact = field_from(grid, lambda x: [x[0] ** 2 - x[1] ** 2])
    sol, _ = solve_quasilinear(coeffs, grid, exact,
                               PicardConfig(solver=SolverConfig(method="direct")))
    assert np.abs(sol.values - exact.values).max() <= 1e-7


def test_audit_invariance_maximum_principle():
    grid = unit_grid((17, 17))
    bnd = field_from(grid, lambda x: [0.5 + 0.5 * np.cos(2 * np.pi * x[0]) *
                                      (1.0 if x[1] in (0.0, 1.0) else 1.0) * 0.9])
    sol, _ = solve_dirichlet(scalar_laplacian(), grid, bnd,
                             SolverConfig(method="direct"))
    audit = audit_invariance(sol, box(np.zeros(1), np.ones(1)))
    assert audit.passed
    assert audit.max_margin <= audit.audit_tol
    assert audit.boundary_max_margin <= 1e-9
    assert len(audit.worst_node) == 2


def test_audit_rejects_boundary_outside_body():
    grid = unit_grid((9, 9))
    bnd = field_from(grid, lambda x: [2.0])
    sol, _ = solve_dirichlet(scalar_laplacian(), grid, bnd,
                             SolverConfig(method="direct"))
    with pytest.raises(ValueError):
        audit_invariance(sol, box(np.zeros(1), np.ones(1)))


def test_random_boundary_field_is_body_valued_and_seeded():
    grid = unit_grid((9, 9))
    body = orthant(2)
    f1 = random_boundary_field(grid, body, np.random.default_rng(5))
    f2 = random_boundary_field(grid, body, np.random.default_rng(5))
    assert np.array_equal(f1.values, f2.values)
    assert body.violation_margins(f1.flat).max() <= 1e-9


def test_search_finds_no_violation_for_diagonal_system():
    tensor = np.zeros((2, 2, 2, 2))
    tensor[0, 0] = np.diag([1.0, 2.0])
    tensor[1, 1] = np.diag([2.0, 1.0])
    coeffs = SystemCoefficients(2, 2, tensor)
    grid = unit_grid((9, 9))
    out = search_boundary_violation(coeffs, grid, orthant(2),
                                    np.random.default_rng(3), budget=20,
                                    threshold=1e-6)
    assert not out["found"]
    assert out["solves"] == 20
    assert out["margin"] <= 1e-6


def test_search_finds_violation_for_coupled_system():
    eps = 0.3
    tensor = np.zeros((2, 2, 2, 2))
    tensor[0, 0] = np.eye(2)
    tensor[1, 1] = np.eye(2)
    tensor[0, 1] = tensor[1, 0] = eps * np.array([[0.0, 0.0], [1.0, 0.0]])
    coeffs = SystemCoefficients(2, 2, tensor)
    grid = unit_grid((17, 17))
    out = search_boundary_violation(coeffs, grid, orthant(2),
                                    np.random.default_rng(11), budget=120,
                                    threshold=1e-3)
    assert out["found"], out["margin"]
    assert out["solves"] <= 120
    bnd = out["boundary"]
    assert orthant(2).violation_margins(bnd.flat).max() <= 1e-9
