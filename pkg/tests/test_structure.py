import numpy as np
import pytest

from conftest import random_elliptic_system, random_factorized_system
from ellinv.bodies import (Ball, DegenerateBodyError, HalfSpace,
                           PolyhedralAngle, PolyhedralCone,
                           PolyhedralCylinder, Polytope, SphericalCylinder,
                           orthant)
from ellinv.conditions import SystemCoefficients, left_eigen_scalar
from ellinv.structure import (CONJUGATED_DIAGONAL, DIAGONAL, DIAGONAL_FAMILY,
                              ROWS_ZEROED_DIAGONAL,
                              ROWS_ZEROED_EQUAL_DIAGONAL, SCALAR,
                              SCALAR_OPERATOR, admissible_family,
                              alignment_solution_space, classify_matrix,
                              cone_conjugation, detect_factorization,
                              factorized_coefficients)


def test_cone_conjugation_two_normals_example():
    normals = np.array([[0.0, -1.0], [1.0, 1.0] / np.sqrt(2.0)])
    mat = cone_conjugation(normals, [1.0, 2.0])
    for nu, d in zip(normals, [1.0, 2.0]):
        assert np.allclose(mat.T @ nu, d * nu, atol=1e-12)


def test_cone_conjugation_random_round_trip():
    rng = np.random.default_rng(7)
    for m in (2, 3, 4):
        for _ in range(30):
            while True:
                nrm = rng.normal(size=(m, m))
                nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
                if abs(np.linalg.det(nrm.T)) > 0.1:
                    break
            diag = rng.uniform(0.5, 3.0, size=m)
            mat = cone_conjugation(nrm, diag)
            for nu, d in zip(nrm, diag):
                assert np.allclose(mat.T @ nu, d * nu, atol=1e-10)
            # scalars are recoverable through the generic classifier
            got = [left_eigen_scalar(mat, nu, tol=1e-8) for nu in nrm]
            assert np.allclose(got, diag, atol=1e-8)


def test_cone_conjugation_rejects_dependent_normals():
    nrm = np.array([[1.0, 0.0], [1.0, 1e-13]])
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    with pytest.raises(DegenerateBodyError):
        cone_conjugation(nrm, [1.0, 2.0])


def test_admissible_family_catalogue_tags():
    assert admissible_family(orthant(3)).tag == DIAGONAL
    angle = PolyhedralAngle(3, (0, 2), np.zeros(2))
    fam = admissible_family(angle)
    assert fam.tag == ROWS_ZEROED_DIAGONAL and fam.rows == (0, 2)
    cyl = PolyhedralCylinder(3, (1,), np.array([0.0]), np.array([1.0]))
    fam = admissible_family(cyl)
    assert fam.tag == ROWS_ZEROED_DIAGONAL and fam.rows == (1,)
    sph = SphericalCylinder(3, 2, 1.0)
    fam = admissible_family(sph)
    assert fam.tag == ROWS_ZEROED_EQUAL_DIAGONAL and fam.rows == (1, 2)
    assert admissible_family(Ball(np.zeros(3), 2.0)).tag == SCALAR
    tri = PolyhedralCone(np.zeros(2), np.array([[0.0, -1.0], [1.0, 1.0] / np.sqrt(2)]))
    fam = admissible_family(tri)
    assert fam.tag == CONJUGATED_DIAGONAL
    assert np.allclose(fam.normal_matrix, tri.normals.T)
    square = PolyhedralCone(np.zeros(3),
                            np.array([[1.0, 0.0, -1.0], [-1.0, 0.0, -1.0],
                                      [0.0, 1.0, -1.0], [0.0, -1.0, -1.0]])
                            / np.sqrt(2.0))
    assert admissible_family(square).tag == SCALAR
    half = HalfSpace(np.array([0.0, 0.0, -1.0]), np.zeros(3))
    fam = admissible_family(half)
    assert fam.tag == ROWS_ZEROED_DIAGONAL and fam.rows == (2,)
    square2 = Polytope(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
                       np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [0.0, 0.0]]))
    assert admissible_family(square2).tag == DIAGONAL


def test_family_members_pass_classifier_and_perturbations_fail():
    rng = np.random.default_rng(11)
    bodies = [orthant(2), orthant(3),
              PolyhedralAngle(3, (0, 1), np.zeros(2)),
              SphericalCylinder(3, 2, 1.0),
              Ball(np.zeros(3), 1.0),
              PolyhedralCone(np.zeros(2), np.array([[0.0, -1.0], [0.6, 0.8]]))]
    for body in bodies:
        fam = admissible_family(body)
        for _ in range(10):
            member = fam.random_member(rng)
            assert classify_matrix(member, body) is not None
            bad = member + 1e-3 * fam.random_off_family_direction(rng)
            assert classify_matrix(bad, body, tol=1e-6) is None


def test_classify_matrix_diagonal_orthant_scalars():
    mat = np.diag([2.0, 5.0, 7.0])
    table = classify_matrix(mat, orthant(3))
    assert table is not None
    for nu, val in table.items():
        comp = int(np.argmin(np.asarray(nu)))
        assert val == pytest.approx(mat[comp, comp])


def test_classify_matrix_scalar_on_ball():
    table = classify_matrix(4.0 * np.eye(2), Ball(np.zeros(2), 1.0), normal_budget=16)
    assert table is not None
    assert all(val == pytest.approx(4.0) for val in table.values())
    assert classify_matrix(np.diag([1.0, 2.0]), Ball(np.zeros(2), 1.0)) is None


def test_alignment_solution_space_dimensions():
    axis = alignment_solution_space(np.array([[-1.0, 0.0], [0.0, -1.0]]))
    assert len(axis) == 2
    rng = np.random.default_rng(13)
    generic = rng.normal(size=(4, 2))
    generic /= np.linalg.norm(generic, axis=1, keepdims=True)
    scal = alignment_solution_space(generic)
    assert len(scal) == 1
    assert np.allclose(np.abs(scal[0]), np.eye(2) / np.sqrt(2.0), atol=1e-10)
    for basis, normals in ((axis, np.eye(2) * -1.0), (scal, generic)):
        for mat in basis:
            for nu in normals:
                w = mat.T @ nu
                assert np.linalg.norm(w - (w @ nu) * nu) <= 1e-10


def test_detect_factorization_worked_diagonal_example():
    tensor = np.zeros((2, 2, 2, 2))
    tensor[0, 0] = np.array([[1.0, 1.0], [0.0, 1.0]])
    tensor[1, 1] = np.array([[1.0, 2.0], [0.0, 2.0]])
    fac = detect_factorization(SystemCoefficients(2, 2, tensor))
    assert fac.kind == DIAGONAL_FAMILY
    assert fac.residual <= 1e-12
    assert fac.delta_estimate > 0
    # gauge: trailing pure second derivative coefficient is one per form
    assert np.allclose(fac.forms[:, 1, 1], 1.0)
    recon = factorized_coefficients(fac.mixing, fac.forms)
    assert np.allclose(recon.second_order, tensor, atol=1e-12)


def test_detect_factorization_scalar_operator_identity():
    tensor = np.zeros((2, 2, 2, 2))
    tensor[0, 0] = np.eye(2)
    tensor[1, 1] = np.eye(2)
    fac = detect_factorization(SystemCoefficients(2, 2, tensor))
    assert fac.kind == SCALAR_OPERATOR
    assert np.allclose(fac.mixing, np.eye(2), atol=1e-12)
    assert np.allclose(fac.forms, np.broadcast_to(np.eye(2), (2, 2, 2)), atol=1e-12)


def test_detect_factorization_round_trip_random():
    rng = np.random.default_rng(17)
    for kind, tag in (("diagonal", DIAGONAL_FAMILY), ("scalar", SCALAR_OPERATOR)):
        for n in (2, 3):
            for _ in range(20):
                coeffs, mixing, forms = random_factorized_system(rng, n, 2, kind)
                fac = detect_factorization(coeffs)
                assert fac.kind == tag, (kind, n)
                assert fac.residual <= 1e-10
                recon = factorized_coefficients(fac.mixing, fac.forms)
                assert np.allclose(recon.second_order, coeffs.second_order,
                                   atol=1e-9)


def test_detect_factorization_epsilon_coupling_oracle():
    # oracle: the first-column stack has two orthogonal rows of norms
    # sqrt(2) and eps, so its singular value ratio is exactly eps/sqrt(2)
    eps = 0.1
    tensor = np.zeros((2, 2, 2, 2))
    tensor[0, 0] = np.eye(2)
    tensor[1, 1] = np.eye(2)
    coupling = np.array([[0.0, 0.0], [eps, 0.0]])
    tensor[0, 1] = tensor[1, 0] = coupling
    fac = detect_factorization(SystemCoefficients(2, 2, tensor))
    assert fac.kind is None
    assert fac.column_ratios[0] == pytest.approx(eps / np.sqrt(2.0), rel=1e-9)
    assert fac.column_ratios[1] == pytest.approx(0.0, abs=1e-12)
    assert fac.column_ratios[0] > 1e-3


def test_detect_factorization_generic_systems_none():
    rng = np.random.default_rng(19)
    for _ in range(20):
        coeffs = random_elliptic_system(rng, 2, 2)
        fac = detect_factorization(coeffs)
        assert fac.kind is None
        assert max(fac.column_ratios) > 1e-3


def test_detect_factorization_rejects_bad_input():
    with pytest.raises(ValueError):
        detect_factorization(SystemCoefficients(2, 1, np.zeros((2, 2, 1, 1))))
    varying = SystemCoefficients(
        2, 1, lambda x: np.eye(1)[None, None] * np.eye(2)[:, :, None, None])
    with pytest.raises(ValueError):
        detect_factorization(varying)


def test_detect_factorization_m1_is_scalar():
    tensor = np.array([[[[2.0]], [[0.3]]], [[[0.3]], [[1.0]]]])
    fac = detect_factorization(SystemCoefficients(2, 1, tensor))
    assert fac.kind == SCALAR_OPERATOR
    assert fac.forms[0, 1, 1] == pytest.approx(1.0)
    assert fac.mixing[0, 0] == pytest.approx(1.0)
    assert np.allclose(fac.mixing[0, 0] * fac.forms[0], tensor[:, :, 0, 0])
