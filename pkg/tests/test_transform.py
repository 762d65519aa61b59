import numpy as np
import pytest

from conftest import body_valued_points, family_kernel, renormalized
from ellinv.bodies import Ball, PolyhedralCone, box, orthant
from ellinv.transform import (DiscreteKernel, KernelPoint, NormalizationError,
                              WitnessError, apply_transform, build_witness,
                              check_kernel_invariance, double_layer_kernel)


def two_node_kernel(mats, weights=(0.5, 0.5), label="x0"):
    mats = np.asarray(mats, dtype=float)
    return DiscreteKernel(mats.shape[1], (
        KernelPoint(label, ("y0", "y1"), np.asarray(weights, float), mats),))


def test_kernel_point_normalization_defect():
    pt = KernelPoint("x", ("a", "b"), np.array([0.5, 0.5]),
                     np.array([np.eye(2), np.eye(2)]))
    assert pt.normalization_defect() == 0.0
    shifted = KernelPoint("x", ("a", "b"), np.array([0.5, 0.5]),
                          np.array([np.eye(2), np.eye(2) + 3e-3]))
    assert shifted.normalization_defect() == pytest.approx(1.5e-3)


def test_kernel_rejects_unnormalized_and_bad_weights():
    with pytest.raises(NormalizationError):
        two_node_kernel([np.eye(2), 1.01 * np.eye(2)])
    with pytest.raises(ValueError):
        KernelPoint("x", ("a",), np.array([-0.5]), np.array([np.eye(2)]))
    with pytest.raises(ValueError):
        KernelPoint("x", ("a", "b"), np.array([0.5, 0.5]),
                    np.array([np.eye(2)]))
    good = KernelPoint("x", ("a",), np.array([1.0]), np.array([np.eye(2)]))
    with pytest.raises(ValueError):
        DiscreteKernel(2, (good, good))


def test_apply_transform_is_weighted_matrix_average():
    mats = np.array([[[2.0, 0.0], [0.0, 1.0]], [[0.0, 0.0], [0.0, 1.0]]])
    kern = two_node_kernel(mats)
    u = {"y0": np.array([1.0, 2.0]), "y1": np.array([3.0, 4.0])}
    out = apply_transform(kern, u, "x0")
    expect = 0.5 * mats[0] @ u["y0"] + 0.5 * mats[1] @ u["y1"]
    assert np.allclose(out, expect, atol=1e-14)
    with pytest.raises(KeyError):
        apply_transform(kern, u, "missing")


def test_invariance_check_passes_on_admissible_families():
    rng = np.random.default_rng(23)
    bodies = [orthant(2), orthant(3), Ball(np.zeros(2), 1.5),
              PolyhedralCone(np.zeros(2), np.array([[0.0, -1.0], [0.6, 0.8]]))]
    for body in bodies:
        kern = family_kernel(body, rng, n_points=2, n_nodes=4)
        report = check_kernel_invariance(kern, body)
        assert report.passed, type(body).__name__
        assert all(g >= -1e-8 for g in report.scalar_table.values())


def test_invariance_check_fails_and_names_location():
    mats = np.array([[[1.0, 0.0], [0.8, 1.0]], [[1.0, 0.0], [-0.8, 1.0]]])
    kern = renormalized(mats, [0.5, 0.5], 2, "x0")
    report = check_kernel_invariance(kern, orthant(2))
    assert not report.passed
    fail = report.failures[0]
    assert fail.x == "x0"
    assert fail.node in (0, 1)
    assert fail.residual > 1e-8 or fail.scalar < -1e-8


def test_zero_weight_nodes_are_ignored():
    mats = np.array([np.eye(2), 100.0 * np.array([[0.0, 1.0], [1.0, 0.0]])])
    kern = two_node_kernel(mats, weights=(1.0, 0.0))
    assert check_kernel_invariance(kern, orthant(2)).passed


def test_body_valued_inputs_stay_in_body_when_check_passes():
    rng = np.random.default_rng(29)
    for body in (orthant(2), Ball(np.zeros(3), 2.0), box(np.zeros(2), np.ones(2))):
        kern = family_kernel(body, rng, n_points=1, n_nodes=3)
        report = check_kernel_invariance(kern, body)
        assert report.passed
        pt = kern.points[0]
        for _ in range(200):
            vals = body_valued_points(body, rng, len(pt.nodes))
            u = dict(zip(pt.nodes, vals))
            out = apply_transform(kern, u, pt.label)
            assert body.violation_margin(out) <= 1e-9


def test_witness_residual_route_escapes_body():
    rng = np.random.default_rng(31)
    mats = np.array([[[1.0, 0.0], [0.8, 1.0]], [[1.0, 0.0], [-0.8, 1.0]]])
    kern = renormalized(mats, [0.5, 0.5], 2, "x0")
    body = orthant(2)
    a = np.array([1.0, 0.0])  # facet interior, normal -e2
    nu = np.array([0.0, -1.0])
    witness = build_witness(kern, body, "x0", a, nu)
    for val in witness.values():
        assert body.contains(val, 1e-9)
    out = apply_transform(kern, witness, "x0")
    assert body.violation_margin(out) > 0


def test_witness_negative_scalar_route_escapes_body():
    mats = np.array([2.0 * np.eye(2), -np.eye(2)])
    kern = two_node_kernel(mats, weights=(1.0, 1.0))
    body = orthant(2)
    a = np.array([1.0, 0.0])
    nu = np.array([0.0, -1.0])
    witness = build_witness(kern, body, "x0", a, nu)
    for val in witness.values():
        assert body.contains(val, 1e-9)
    out = apply_transform(kern, witness, "x0")
    assert body.violation_margin(out) > 0


def test_witness_raises_when_kernel_is_admissible():
    rng = np.random.default_rng(37)
    body = orthant(2)
    kern = family_kernel(body, rng, n_points=1, n_nodes=3)
    pt = kern.points[0]
    with pytest.raises(WitnessError):
        build_witness(kern, body, pt.label, np.array([1.0, 0.0]),
                      np.array([0.0, -1.0]))


def test_witness_alpha_too_large_suggests_smaller():
    mats = np.array([[[1.0, 0.0], [0.8, 1.0]], [[1.0, 0.0], [-0.8, 1.0]]])
    kern = renormalized(mats, [0.5, 0.5], 2, "x0")
    body = box(np.zeros(2), np.ones(2))
    a = np.array([0.5, 0.0])
    nu = np.array([0.0, -1.0])
    with pytest.raises(WitnessError, match="alpha"):
        build_witness(kern, body, "x0", a, nu, alpha=1e6)
    witness = build_witness(kern, body, "x0", a, nu)
    assert body.violation_margin(apply_transform(kern, witness, "x0")) > 0


def test_double_layer_square_center_weights():
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    kern, mids = double_layer_kernel(square, [[0.5, 0.5]])
    pt = kern.points[0]
    assert np.allclose(pt.weights, 0.25, atol=1e-14)
    assert np.allclose(mids, [[0.5, 0.0], [1.0, 0.5], [0.5, 1.0], [0.0, 0.5]])


def test_double_layer_weights_sum_to_one_interior_grid():
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    xs = [[0.2 + 0.15 * i, 0.2 + 0.15 * j] for i in range(5) for j in range(5)]
    kern, mids = double_layer_kernel(square, xs, refine=8)
    for pt in kern.points:
        assert abs(pt.weights.sum() - 1.0) <= 1e-12
        assert np.all(pt.weights > 0)
    assert mids.shape == (32, 2)


def test_double_layer_preserves_unit_interval():
    rng = np.random.default_rng(41)
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    kern, mids = double_layer_kernel(square, [[0.3, 0.7], [0.9, 0.1]], refine=4)
    interval = box(np.zeros(1), np.ones(1))
    assert check_kernel_invariance(kern, interval).passed
    for _ in range(100):
        u = {i: rng.uniform(0.0, 1.0, size=1) for i in range(mids.shape[0])}
        for pt in kern.points:
            out = apply_transform(kern, u, pt.label)
            assert -1e-12 <= out[0] <= 1.0 + 1e-12


def test_double_layer_rejects_exterior_and_bad_polygon():
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        double_layer_kernel(square, [[1.5, 0.5]])
    with pytest.raises(ValueError):
        double_layer_kernel(square[::-1], [[0.5, 0.5]])
    with pytest.raises(ValueError):
        double_layer_kernel(square[:2], [[0.5, 0.5]])
