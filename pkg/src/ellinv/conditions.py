"""Algebraic invariance conditions for strongly elliptic systems.

A system is described by matrix coefficients A_jk (second order, symmetric
in the spatial index pair) plus optional first-order matrices A_j or a
gradient-dependent quasilinear sampler B_jk(x, eta).  Invariance of a convex
body requires every coefficient matrix to admit each sampled outward normal
as a left eigenvector; the recovered scalar fields then form a uniformly
elliptic scalar operator, which is certified numerically here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bodies import unit_sphere_samples


@dataclass(frozen=True, eq=False)
class SystemCoefficients:
    """Coefficients of sum_jk A_jk d2/dx_j dx_k + sum_j A_j d/dx_j.

    ``second_order`` is an (n, n, m, m) array (constant coefficients) or a
    callable x -> (n, n, m, m).  The tensor is symmetrized in its first two
    axes at construction/sampling, which loses no generality for the
    operator.  ``first_order`` is (n, m, m) or a callable, ``quasilinear``
    a callable (x, eta) -> (n, n, m, m) with eta the flattened gradient
    (component-major: eta[i*n + j] = d u_i / d x_j).  ``bound`` optionally
    declares a magnitude cap enforced on sampled entries.
    """

    n: int
    m: int
    second_order: object
    first_order: object = None
    quasilinear: object = None
    bound: float = None

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be positive")
        if not callable(self.second_order):
            arr = self._clean2(np.asarray(self.second_order, dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, "second_order", arr)
        if self.first_order is not None and not callable(self.first_order):
            arr = np.asarray(self.first_order, dtype=float)
            if arr.shape != (self.n, self.m, self.m):
                raise ValueError("first_order must have shape (n, m, m)")
            self._check_entries(arr)
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, "first_order", arr)
        if self.quasilinear is not None and not callable(self.quasilinear):
            raise ValueError("quasilinear must be a callable (x, eta) -> tensor")

    def _check_entries(self, arr):
        if not np.all(np.isfinite(arr)):
            raise ValueError("coefficient entries must be finite")
        if self.bound is not None and np.any(np.abs(arr) > self.bound * (1 + 1e-12)):
            raise ValueError("coefficient entries exceed the declared bound")

    def _clean2(self, arr):
        if arr.shape != (self.n, self.n, self.m, self.m):
            raise ValueError("second-order tensor must have shape (n, n, m, m)")
        self._check_entries(arr)
        return 0.5 * (arr + arr.transpose(1, 0, 2, 3))

    @classmethod
    def from_pairs(cls, n, m, a2, a1=None, quasilinear=None, bound=None):
        """Build from {(j, k): matrix} with j <= k filling the symmetric slot."""
        tensor = np.zeros((n, n, m, m))
        for (j, k), mat in a2.items():
            mat = np.asarray(mat, dtype=float)
            tensor[j, k] = mat
            tensor[k, j] = mat
        first = None
        if a1 is not None:
            first = np.zeros((n, m, m))
            for j, mat in a1.items():
                first[j] = np.asarray(mat, dtype=float)
        return cls(n, m, tensor, first, quasilinear, bound)

    @property
    def is_constant(self):
        return not callable(self.second_order)

    @property
    def has_first_order(self):
        return self.first_order is not None

    @property
    def has_quasilinear(self):
        return self.quasilinear is not None

    def second_order_at(self, x):
        if self.is_constant:
            return self.second_order
        return self._clean2(np.asarray(self.second_order(np.asarray(x, dtype=float)), dtype=float))

    def first_order_at(self, x):
        if self.first_order is None:
            return None
        if callable(self.first_order):
            arr = np.asarray(self.first_order(np.asarray(x, dtype=float)), dtype=float)
            if arr.shape != (self.n, self.m, self.m):
                raise ValueError("first_order sampler returned wrong shape")
            self._check_entries(arr)
            return arr
        return self.first_order

    def quasilinear_at(self, x, eta):
        if self.quasilinear is None:
            raise ValueError("system has no quasilinear part")
        arr = np.asarray(
            self.quasilinear(np.asarray(x, dtype=float), np.asarray(eta, dtype=float)),
            dtype=float,
        )
        return self._clean2(arr)


def normal_alignment_split(mat, nu):
    """Split t(M) nu into its component along nu and the residual.

    Returns (scalar, residual) with scalar = (t(M) nu, nu) and
    residual = t(M) nu - scalar * nu, which is orthogonal to nu.
    """
    mat = np.asarray(mat, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if abs(np.linalg.norm(nu) - 1.0) > 1e-12:
        raise ValueError("nu must be a unit vector")
    w = mat.T @ nu
    a = float(w @ nu)
    return a, w - a * nu


def left_eigen_scalar(mat, nu, tol=1e-8):
    """Scalar a with t(M) nu = a nu, or None if the relation fails.

    The residual is compared against tol * (1 + ||M||_F).
    """
    a, res = normal_alignment_split(mat, nu)
    if np.linalg.norm(res) <= tol * (1.0 + np.linalg.norm(mat)):
        return a
    return None


def _symbol_min(tensor, sigmas, zeta_directions=None):
    """Min over the sigma batch of the smallest symmetric-part eigenvalue
    of M(sigma) = sum_jk A_jk sigma_j sigma_k (optionally restricted to
    quadratic forms along given unit directions zeta)."""
    msym = np.einsum("jkpq,sj,sk->spq", tensor, sigmas, sigmas)
    msym = 0.5 * (msym + msym.transpose(0, 2, 1))
    if zeta_directions is None:
        vals = np.linalg.eigvalsh(msym)[:, 0]
    else:
        z = np.asarray(zeta_directions, dtype=float)
        vals = np.einsum("spq,zp,zq->sz", msym, z, z).min(axis=1)
    k = int(np.argmin(vals))
    return float(vals[k]), k


def _refine_on_sphere(eval_min, sigma0, budget, passes=2, points=24):
    """Local minimization around sigma0 with shrinking tangent perturbations."""
    n = sigma0.shape[0]
    best_val, best_sig = eval_min(sigma0[None, :])[0], sigma0
    if n == 1:
        return best_val
    radius = 4.0 / max(budget, 4) ** (1.0 / max(n - 1, 1))
    offsets = unit_sphere_samples(n, points)
    for _ in range(passes):
        cand = best_sig[None, :] + radius * offsets
        cand = cand / np.linalg.norm(cand, axis=1)[:, None]
        val, k = eval_min(cand)
        if val < best_val:
            best_val, best_sig = val, cand[k]
        radius *= 0.3
    return best_val


def ellipticity_constant(coeffs, x_samples, sphere_budget=256, *, eta_samples=None,
                         zeta_directions=None, refine_passes=2):
    """Sampled lower ellipticity estimate of the second-order symbol.

    Scans a deterministic direction grid on the unit sphere at every supplied
    spatial (and gradient, if quasilinear) sample, takes the smallest
    symmetric-part eigenvalue of the symbol, and polishes the minimizer with
    a short local refinement.  The result never falls below the true
    infimum restricted to the sampled coefficient set.  ``zeta_directions``
    optionally restricts the state-space quadratic form to the given unit
    vectors instead of the full eigenvalue bound.
    """
    if sphere_budget < max(coeffs.n, 2):
        raise ValueError("sphere_budget too small")
    x_samples = list(x_samples)
    if not x_samples:
        raise ValueError("x_samples must be nonempty")
    sigmas = unit_sphere_samples(coeffs.n, sphere_budget)
    if coeffs.has_quasilinear:
        etas = list(eta_samples) if eta_samples is not None else [np.zeros(coeffs.m * coeffs.n)]
        tensors = [coeffs.quasilinear_at(x, e) for x in x_samples for e in etas]
    else:
        tensors = [coeffs.second_order_at(x) for x in x_samples]

    best = np.inf
    for tensor in tensors:
        def eval_min(batch, tensor=tensor):
            return _symbol_min(tensor, batch, zeta_directions)

        val, k = eval_min(sigmas)
        val = min(val, _refine_on_sphere(eval_min, sigmas[k], sphere_budget, refine_passes))
        best = min(best, val)
    return float(best)


@dataclass(frozen=True)
class ConditionFailure:
    x: tuple
    eta: tuple
    normal: tuple
    index: tuple
    residual: float


@dataclass
class ConditionReport:
    passed: bool
    delta_estimate: float
    failures: list = field(default_factory=list)
    scalar_fields: dict = field(default_factory=dict)
    reduced_form_min: float = None


def _key(arr):
    return None if arr is None else tuple(np.asarray(arr, dtype=float).tolist())


def _collect_alignment(tensors, nu, tol, x_key, eta_key, failures, scalars):
    ok = True
    for index, mat in tensors:
        a, res = normal_alignment_split(mat, nu)
        rn = float(np.linalg.norm(res))
        if rn <= tol * (1.0 + np.linalg.norm(mat)):
            scalars[(index, x_key, eta_key, _key(nu))] = a
        else:
            ok = False
            failures.append(ConditionFailure(x_key, eta_key, _key(nu), index, rn))
    return ok


def _certify_reduced(coeffs, scalars, pairs, x_keys, eta_keys, sigmas):
    """Smallest sampled value of the recovered scalar symbol sum a_jk s_j s_k."""
    worst = np.inf
    n = coeffs.n
    for x_key in x_keys:
        for eta_key in eta_keys:
            for _, nu in pairs:
                nu_key = _key(nu)
                q = np.zeros((n, n))
                complete = True
                tag = "B2" if eta_key is not None else "A2"
                for j in range(n):
                    for k in range(j, n):
                        val = scalars.get(((tag, j, k), x_key, eta_key, nu_key))
                        if val is None:
                            complete = False
                            break
                        q[j, k] = q[k, j] = val
                    if not complete:
                        break
                if complete:
                    worst = min(worst, float(np.einsum("sj,jk,sk->s", sigmas, q, sigmas).min()))
    return worst


def _default_x_samples(coeffs, x_samples):
    """Normalize a sample list; constant coefficients need only one point."""
    if x_samples is None:
        if callable(coeffs.second_order) or callable(coeffs.first_order):
            raise ValueError("spatially varying coefficients need x_samples")
        return [np.zeros(coeffs.n)]
    x_samples = [np.asarray(x, dtype=float) for x in x_samples]
    if not x_samples:
        raise ValueError("x_samples must be nonempty")
    return x_samples


def check_linear_conditions(coeffs, body, x_samples=None, normal_budget=64,
                            tol=1e-8, *, sphere_budget=256):
    """Check the left-eigenvector conditions of a linear system for a body.

    Every second-order matrix A_jk and first-order matrix A_j must admit each
    sampled outward normal as a left eigenvector.  The report collects the
    recovered scalar fields, an ellipticity estimate, and the smallest
    sampled value of the reduced scalar symbol (which cannot fall below the
    ellipticity estimate when the check passes).
    """
    if coeffs.has_quasilinear:
        raise ValueError("use check_quasilinear_conditions for gradient-dependent systems")
    x_samples = _default_x_samples(coeffs, x_samples)
    pairs = body.normal_samples(normal_budget)
    failures, scalars = [], {}
    for x in x_samples:
        a2 = coeffs.second_order_at(x)
        a1 = coeffs.first_order_at(x)
        tensors = [(("A2", j, k), a2[j, k]) for j in range(coeffs.n) for k in range(j, coeffs.n)]
        if a1 is not None:
            tensors += [(("A1", j), a1[j]) for j in range(coeffs.n)]
        for _, nu in pairs:
            _collect_alignment(tensors, nu, tol, _key(x), None, failures, scalars)
    delta = ellipticity_constant(coeffs, x_samples, sphere_budget)
    report = ConditionReport(passed=not failures, delta_estimate=delta,
                             failures=failures, scalar_fields=scalars)
    if report.passed:
        sigmas = unit_sphere_samples(coeffs.n, sphere_budget)
        report.reduced_form_min = _certify_reduced(
            coeffs, scalars, pairs, [_key(x) for x in x_samples], [None], sigmas)
        slack = 1e-10 * (1.0 + abs(delta))
        if report.reduced_form_min < delta - slack:
            report.passed = False
            report.failures.append(ConditionFailure(
                None, None, None, ("reduced_form",), float(delta - report.reduced_form_min)))
    return report


def check_quasilinear_conditions(coeffs, body, x_samples=None, eta_samples=None,
                                 normal_budget=64, tol=1e-8, *, sphere_budget=256):
    """Same check for gradient-dependent second-order coefficients B_jk(x, eta)."""
    if not coeffs.has_quasilinear:
        raise ValueError("system has no quasilinear part")
    if x_samples is None:
        raise ValueError("gradient-dependent coefficients need x_samples; "
                         "pass [np.zeros(n)] if they do not vary in x")
    x_samples = [np.asarray(x, dtype=float) for x in x_samples]
    if not x_samples:
        raise ValueError("x_samples must be nonempty")
    if eta_samples is None:
        eta_samples = default_eta_samples(coeffs.n, coeffs.m)
    eta_samples = [np.asarray(e, dtype=float) for e in eta_samples]
    if not eta_samples:
        raise ValueError("eta_samples must be nonempty")
    pairs = body.normal_samples(normal_budget)
    failures, scalars = [], {}
    for x in x_samples:
        for eta in eta_samples:
            b2 = coeffs.quasilinear_at(x, eta)
            tensors = [(("B2", j, k), b2[j, k]) for j in range(coeffs.n) for k in range(j, coeffs.n)]
            for _, nu in pairs:
                _collect_alignment(tensors, nu, tol, _key(x), _key(eta), failures, scalars)
    delta = ellipticity_constant(coeffs, x_samples, sphere_budget, eta_samples=eta_samples)
    report = ConditionReport(passed=not failures, delta_estimate=delta,
                             failures=failures, scalar_fields=scalars)
    if report.passed:
        sigmas = unit_sphere_samples(coeffs.n, sphere_budget)
        report.reduced_form_min = _certify_reduced(
            coeffs, scalars, pairs, [_key(x) for x in x_samples],
            [_key(e) for e in eta_samples], sigmas)
        slack = 1e-10 * (1.0 + abs(delta))
        if report.reduced_form_min < delta - slack:
            report.passed = False
            report.failures.append(ConditionFailure(
                None, None, None, ("reduced_form",), float(delta - report.reduced_form_min)))
    return report


def default_eta_samples(n, m, scale=1.0):
    """Zero gradient plus plus/minus coordinate gradients at the given scale."""
    dim = n * m
    out = [np.zeros(dim)]
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = scale
        out.append(e.copy())
        out.append(-e)
    return out


def cone_in_complement(h, domain):
    """True iff no domain point lies in {x_n^2 > h^2 |x'|^2, x_n < 0}.

    ``domain`` is either a (lower, upper) box pair or an (N, n) point cloud.
    Requires h > 1.
    """
    if not h > 1:
        raise ValueError("cone opening parameter must exceed 1")
    if isinstance(domain, tuple) and len(domain) == 2:
        lo = np.asarray(domain[0], dtype=float)
        hi = np.asarray(domain[1], dtype=float)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("malformed box domain")
        if lo[-1] >= 0:
            return True
        # deepest available point, laterally as close to the axis as possible
        closest = np.clip(0.0, lo[:-1], hi[:-1])
        return not (lo[-1] ** 2 > h**2 * float(closest @ closest))
    pts = np.atleast_2d(np.asarray(domain, dtype=float))
    lateral = np.einsum("pi,pi->p", pts[:, :-1], pts[:, :-1])
    inside = (pts[:, -1] < 0) & (pts[:, -1] ** 2 > h**2 * lateral)
    return not bool(inside.any())
