"""Shared generators for the test suite.

All randomness flows through explicitly seeded numpy generators created in
the tests themselves; the helpers here only consume a passed-in rng.
"""

import numpy as np

from ellinv.conditions import SystemCoefficients, ellipticity_constant
from ellinv.structure import admissible_family, factorized_coefficients
from ellinv.transform import DiscreteKernel, KernelPoint


def random_elliptic_system(rng, n, m, strength=0.3, max_tries=50):
    """Identity-dominated random constant system, certified elliptic."""
    for _ in range(max_tries):
        tensor = np.zeros((n, n, m, m))
        for j in range(n):
            for k in range(j, n):
                block = strength * rng.uniform(-1, 1, size=(m, m))
                if j == k:
                    block += np.eye(m)
                tensor[j, k] = block
                tensor[k, j] = block
        coeffs = SystemCoefficients(n, m, tensor)
        if ellipticity_constant(coeffs, [np.zeros(n)], sphere_budget=64) > 0.05:
            return coeffs
    raise AssertionError("could not draw an elliptic system")


def random_pd_form(rng, n, spread=0.5):
    """Random symmetric positive definite n x n quadratic form."""
    q = rng.uniform(-spread, spread, size=(n, n))
    return np.eye(n) + 0.5 * (q + q.T) @ np.eye(n) + q @ q.T * 0.25


def random_factorized_system(rng, n, m, kind):
    """Constant coefficients of the product structure, plus the factors used."""
    while True:
        mixing = rng.uniform(-1, 1, size=(m, m)) + 2.0 * np.eye(m)
        if abs(np.linalg.det(mixing)) > 0.3:
            break
    if kind == "scalar":
        forms = [random_pd_form(rng, n)] * m
        coeffs = factorized_coefficients(mixing, forms[0])
    else:
        forms = [random_pd_form(rng, n) for _ in range(m)]
        coeffs = factorized_coefficients(mixing, forms)
    return coeffs, mixing, forms


def family_kernel(body, rng, n_points=1, n_nodes=4, shift=2.0):
    """Normalized kernel whose matrices satisfy the body's eigen conditions.

    Draws members of the body's admissible matrix family, shifts them by a
    multiple of the identity so every eigen-scalar is positive, and
    normalizes by the weighted sum, which stays inside the family.
    """
    family = admissible_family(body)
    m = body.dim
    points = []
    for p in range(n_points):
        mats = []
        for _ in range(n_nodes):
            a = family.random_member(rng, scale=1.0)
            mats.append(a + (shift + np.abs(a).sum()) * np.eye(m))
        weights = rng.uniform(0.2, 1.0, size=n_nodes)
        total = sum(w * a for w, a in zip(weights, mats))
        inv = np.linalg.inv(total)
        mats = [a @ inv for a in mats]
        points.append(KernelPoint(label=f"p{p}", nodes=list(range(n_nodes)),
                                  weights=weights, matrices=np.array(mats)))
    return DiscreteKernel(m, points)


def renormalized(matrices, weights, m, label="q0"):
    """Kernel point from raw matrices, renormalized to sum to the identity."""
    matrices = np.asarray(matrices, dtype=float)
    weights = np.asarray(weights, dtype=float)
    total = np.einsum("i,ipq->pq", weights, matrices)
    mats = matrices @ np.linalg.inv(total)
    pt = KernelPoint(label=label, nodes=list(range(len(weights))),
                     weights=weights, matrices=mats)
    return DiscreteKernel(m, [pt])


def body_valued_points(body, rng, count, spread=1.5):
    """Random points pulled into the body toward its interior point."""
    from ellinv.bodies import pull_inside

    anchor = body.interior_point()
    raw = anchor + rng.normal(scale=spread, size=(count, body.dim))
    return pull_inside(body, raw, anchor=anchor)
