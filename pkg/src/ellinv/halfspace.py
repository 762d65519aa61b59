"""Fourier-mode solver for constant-coefficient systems on a half-space.

Dirichlet data lives on a periodic tangential grid (power-of-two nodes per
axis); each nonzero frequency xi contributes a quadratic eigenvalue problem

    (A_nn lam^2 + 2i lam sum_{j<n} A_jn xi_j - sum_{j,k<n} A_jk xi_j xi_k) v = 0

handled through its companion linearization.  Strong ellipticity separates
the 2m eigenvalues into m with negative and m with positive real part; the
decaying solution space is extracted as the stable invariant subspace of an
ordered Schur decomposition, so repeated eigenvalues with Jordan structure
(polynomially growing factors t^k e^{lam t}) propagate exactly via small
matrix exponentials.  The zero frequency propagates as the constant bounded
solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import bodies as _b
from .bodies import pull_inside
from .conditions import ellipticity_constant


class DefectiveModeError(RuntimeError):
    """The decaying-mode space could not be matched to the boundary data."""

    def __init__(self, message, xi=None):
        super().__init__(message)
        self.xi = xi


def _is_pow2(k):
    return k >= 2 and (k & (k - 1)) == 0


def _validate_coeffs(coeffs):
    if not coeffs.is_constant:
        raise ValueError("half-space solves need constant coefficients")
    if coeffs.has_first_order or coeffs.has_quasilinear:
        raise ValueError("half-space solves support pure second-order systems")
    if coeffs.n not in (2, 3):
        raise ValueError("half-space solves support 2 or 3 space dimensions")


def _zero_mode_value(c0):
    # constant data extends as the same constant; kept as a hook so tests
    # can corrupt the zero-frequency rule and watch the defect appear
    return c0


def _companions(coeffs, xis):
    """Companion matrices of the height ODE for a batch of frequencies."""
    n, m = coeffs.n, coeffs.m
    d = n - 1
    a = coeffs.second_order
    a_tan = a[:d, :d]
    a_mix = a[:d, d]
    a_nn_inv = np.linalg.inv(a[d, d])
    cmat = -np.einsum("jkpq,Kj,Kk->Kpq", a_tan, xis, xis)
    bmat = 2j * np.einsum("jpq,Kj->Kpq", a_mix, xis)
    comp = np.zeros((xis.shape[0], 2 * m, 2 * m), dtype=complex)
    comp[:, :m, m:] = np.eye(m)
    comp[:, m:, :m] = -np.einsum("pq,Kqr->Kpr", a_nn_inv, cmat)
    comp[:, m:, m:] = -np.einsum("pq,Kqr->Kpr", a_nn_inv, bmat)
    return comp


def _modes_for(coeffs, xis, eps_factor):
    """Stable-subspace blocks for a batch of nonzero tangential frequencies.

    Returns (block, basis): for each frequency, ``block`` is the m x m upper
    triangular restriction of the companion to its decaying invariant
    subspace and ``basis`` the boundary-value part of an orthonormal basis
    of that subspace, so data f extends as basis expm(block h) basis^-1 f.
    """
    m = coeffs.m
    comps = _companions(coeffs, xis)
    xi_norms = np.linalg.norm(xis, axis=1)
    block = np.empty((xis.shape[0], m, m), dtype=complex)
    basis = np.empty((xis.shape[0], m, m), dtype=complex)
    for k in range(xis.shape[0]):
        t, z, sdim = sla.schur(comps[k], output="complex",
                               sort=lambda lam: lam.real < 0)
        eps = eps_factor * max(xi_norms[k], 1.0)
        diag = np.diagonal(t)
        if sdim != m or diag[:m].real.max() >= -eps or diag[m:].real.min() <= eps:
            raise DefectiveModeError(
                f"mode xi={xis[k].tolist()} has no clean stable/unstable split "
                f"(real parts {np.sort(diag.real).tolist()})", xi=xis[k])
        block[k] = t[:m, :m]
        basis[k] = z[:m, :m]
    cond = np.linalg.cond(basis)
    if np.any(cond > 1e12):
        k = int(np.argmax(cond))
        raise DefectiveModeError(
            f"mode xi={xis[k].tolist()} admits no unique bounded extension "
            f"(boundary-value matrix condition {cond[k]:.2e})", xi=xis[k])
    return block, basis


def _propagators(block, basis, h):
    """Batch of maps sending mode coefficients to values at height h."""
    if h == 0.0:
        return basis.copy()
    return basis @ sla.expm(block * h)


def stable_modes(coeffs, xi, eps_factor=1e-8):
    """Decaying solution space for one tangential frequency.

    Returns (eigenvalues, basis, block): the m decaying companion
    eigenvalues (with multiplicity), the boundary-value part of the stable
    subspace basis, and the upper triangular block whose exponential
    propagates mode coefficients to height h.
    """
    _validate_coeffs(coeffs)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.shape != (coeffs.n - 1,) or not np.linalg.norm(xi) > 0:
        raise ValueError("xi must be a nonzero tangential frequency")
    block, basis = _modes_for(coeffs, xi[None, :], eps_factor)
    return np.diagonal(block[0]).copy(), basis[0], block[0]


class PreparedHalfSpace:
    """Mode decomposition reusable across many boundary data sets."""

    def __init__(self, coeffs, cell, shape, eps_factor=1e-8):
        _validate_coeffs(coeffs)
        d = coeffs.n - 1
        cell = np.atleast_1d(np.asarray(cell, dtype=float))
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if cell.shape != (d,) or np.any(cell <= 0):
            raise ValueError("cell must give a positive period per tangential axis")
        if len(shape) != d or not all(_is_pow2(s) for s in shape):
            raise ValueError("tangential node counts must be powers of two (>= 2)")
        self.coeffs = coeffs
        self.cell = cell
        self.shape = shape
        self.m = coeffs.m
        self.delta = ellipticity_constant(coeffs, [np.zeros(coeffs.n)], sphere_budget=128)
        if self.delta <= 0:
            raise ValueError("system is not strongly elliptic on the sampled directions")
        axes = [2.0 * np.pi * np.fft.fftfreq(s, d=c / s) for s, c in zip(shape, cell)]
        mesh = np.meshgrid(*axes, indexing="ij")
        self.xis = np.stack(mesh, axis=-1).reshape(-1, d)
        self.nonzero = np.linalg.norm(self.xis, axis=1) > 0
        self.block, self.basis = _modes_for(coeffs, self.xis[self.nonzero], eps_factor)
        self._propagator_cache = {}

    def _propagator(self, h):
        if h not in self._propagator_cache:
            self._propagator_cache[h] = _propagators(self.block, self.basis, h)
        return self._propagator_cache[h]

    def grid_points(self):
        axes = [np.arange(s) * (c / s) for s, c in zip(self.shape, self.cell)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, len(self.shape))

    def apply(self, boundary, heights):
        """Solve for one boundary array; returns (values, max_imag)."""
        boundary = np.asarray(boundary, dtype=float)
        if boundary.shape != self.shape + (self.m,):
            raise ValueError("boundary data shape does not match the grid")
        heights = [float(h) for h in heights]
        if any(h < 0 for h in heights):
            raise ValueError("heights must be nonnegative")
        d = len(self.shape)
        fhat = np.fft.fftn(boundary, axes=tuple(range(d))).reshape(-1, self.m)
        coef = np.linalg.solve(self.basis, fhat[self.nonzero][..., None])[..., 0]
        out = np.empty((len(heights),) + self.shape + (self.m,))
        max_imag = 0.0
        for hi, h in enumerate(heights):
            flat = np.empty((self.xis.shape[0], self.m), dtype=complex)
            flat[self.nonzero] = np.einsum(
                "Kpr,Kr->Kp", self._propagator(h), coef)
            flat[~self.nonzero] = _zero_mode_value(fhat[~self.nonzero])
            spatial = np.fft.ifftn(flat.reshape(self.shape + (self.m,)),
                                   axes=tuple(range(d)))
            max_imag = max(max_imag, float(np.abs(spatial.imag).max()))
            out[hi] = spatial.real
        return out, max_imag


@dataclass(frozen=True, eq=False)
class HalfSpaceProblem:
    """Boundary data on a periodic tangential grid plus evaluation heights."""

    coeffs: object
    boundary: np.ndarray
    cell: np.ndarray
    heights: tuple

    def __post_init__(self):
        _validate_coeffs(self.coeffs)
        boundary = np.asarray(self.boundary, dtype=float).copy()
        heights = tuple(float(h) for h in self.heights)
        if not heights or any(h <= 0 for h in heights):
            raise ValueError("heights must be positive")
        d = self.coeffs.n - 1
        if boundary.ndim != d + 1 or boundary.shape[-1] != self.coeffs.m:
            raise ValueError("boundary must have shape (nodes per axis ..., m)")
        if not all(_is_pow2(s) for s in boundary.shape[:-1]):
            raise ValueError("tangential node counts must be powers of two (>= 2)")
        cell = np.atleast_1d(np.asarray(self.cell, dtype=float)).copy()
        if cell.shape != (d,) or np.any(cell <= 0):
            raise ValueError("cell must give a positive period per tangential axis")
        boundary.setflags(write=False)
        cell.setflags(write=False)
        object.__setattr__(self, "boundary", boundary)
        object.__setattr__(self, "cell", cell)
        object.__setattr__(self, "heights", heights)


@dataclass(frozen=True, eq=False)
class HalfSpaceSolution:
    heights: tuple
    values: np.ndarray  # (len(heights),) + tangential shape + (m,)
    max_imag: float
    delta: float


def solve_halfspace(problem, eps_factor=1e-8):
    prepared = PreparedHalfSpace(problem.coeffs, problem.cell,
                                 problem.boundary.shape[:-1], eps_factor)
    values, max_imag = prepared.apply(problem.boundary, problem.heights)
    return HalfSpaceSolution(problem.heights, values, max_imag, prepared.delta)


def kernel_normalization_check(coeffs, resolution=64, *, cell=None,
                               heights=(0.1, 0.5, 1.0, 2.0), eps_factor=1e-8):
    """Max deviation from constancy when solving with constant data.

    Solves with every basis vector e_i and with the all-ones vector; any
    deviation of the interior field from the boundary constant measures a
    normalization defect of the solution kernel.
    """
    _validate_coeffs(coeffs)
    d = coeffs.n - 1
    if cell is None:
        cell = np.full(d, 2.0 * np.pi)
    prepared = PreparedHalfSpace(coeffs, cell, (resolution,) * d, eps_factor)
    defect = 0.0
    consts = [np.eye(coeffs.m)[i] for i in range(coeffs.m)] + [np.ones(coeffs.m)]
    for vec in consts:
        boundary = np.tile(vec, prepared.shape + (1,))
        vals, _ = prepared.apply(boundary, heights)
        defect = max(defect, float(np.abs(vals - vec).max()))
    return defect


@dataclass
class HalfSpaceAudit:
    passed: bool
    max_margin: float
    worst: tuple  # (instance, height index, node multi-index)
    audit_tol: float
    max_imag: float


def audit_halfspace_invariance(coeffs, body, boundary_list, cell, heights, *,
                               audit_tol=1e-6, eps_factor=1e-8):
    """Solve each boundary data set and report the worst violation margin.

    Boundary data must be body-valued (margin <= 1e-9 nodewise); heights are
    probed with the exact mode evaluation, so passing systems should show
    margins at rounding level.
    """
    boundary_list = [np.asarray(b, dtype=float) for b in boundary_list]
    if not boundary_list:
        raise ValueError("need at least one boundary data set")
    prepared = PreparedHalfSpace(coeffs, cell, boundary_list[0].shape[:-1], eps_factor)
    worst = (-np.inf, None)
    max_imag = 0.0
    for inst, boundary in enumerate(boundary_list):
        if body.violation_margins(boundary.reshape(-1, prepared.m)).max() > 1e-9:
            raise ValueError(f"boundary data set {inst} lies outside the body")
        vals, mi = prepared.apply(boundary, heights)
        max_imag = max(max_imag, mi)
        flat = vals.reshape(len(heights), -1, prepared.m)
        for hi in range(len(heights)):
            margins = body.violation_margins(flat[hi])
            k = int(np.argmax(margins))
            if margins[k] > worst[0]:
                idx = np.unravel_index(k, prepared.shape)
                worst = (float(margins[k]), (inst, hi, tuple(int(v) for v in idx)))
    return HalfSpaceAudit(passed=worst[0] <= audit_tol, max_margin=worst[0],
                          worst=worst[1], audit_tol=audit_tol, max_imag=max_imag)


def random_periodic_field(prepared, body, rng, max_freq=3, amplitude=1.0, anchor=None):
    """Random band-limited tangential data pulled into the body.

    For a full orthant the oscillation is shifted so each component touches
    its lower bound exactly; otherwise nodes are projected along segments
    toward an interior anchor.
    """
    pts = prepared.grid_points()
    m = prepared.m
    raw = np.zeros((pts.shape[0], m))
    for p in range(m):
        for _ in range(max_freq):
            k = rng.integers(1, max_freq + 1, size=pts.shape[1])
            phase = rng.uniform(0, 2 * np.pi)
            amp = amplitude * rng.uniform(0.2, 1.0)
            raw[:, p] += amp * np.cos(2 * np.pi * (pts * k / prepared.cell).sum(axis=1) + phase)
    if isinstance(body, _b.PolyhedralAngle) and len(body.indices) == body.dim:
        vals = raw - raw.min(axis=0) + body.lower[np.argsort(body.indices)]
    else:
        anchor = body.interior_point() if anchor is None else anchor
        vals = pull_inside(body, anchor[None, :] + raw, anchor=anchor)
    return vals.reshape(prepared.shape + (m,))


def search_halfspace_violation(coeffs, body, cell, shape, heights, rng, budget=10000,
                               threshold=1e-3, max_freq=3, eps_factor=1e-8):
    """Randomized search for body-valued data whose solution exits the body.

    Draws band-limited body-valued boundary fields, solves them against one
    prepared mode basis, and keeps the worst margin.  For bodies invariant
    under positive scaling about the origin (a full orthant with zero lower
    bounds) a final greedy amplification rescales the best candidate, since
    margins then scale linearly with the data.
    """
    prepared = PreparedHalfSpace(coeffs, cell, shape, eps_factor)
    best = {"margin": -np.inf, "boundary": None}
    solves = 0
    conic = (isinstance(body, _b.PolyhedralAngle)
             and len(body.indices) == body.dim
             and np.all(body.lower == 0))

    def margin_of(boundary):
        vals, _ = prepared.apply(boundary, heights)
        return float(body.violation_margins(vals.reshape(-1, prepared.m)).max())

    for _ in range(budget):
        boundary = random_periodic_field(prepared, body, rng, max_freq)
        margin = margin_of(boundary)
        solves += 1
        if margin > best["margin"]:
            best = {"margin": margin, "boundary": boundary}
        if margin > threshold:
            break
        if conic and margin > 0 and solves < budget:
            scale = 2.0 * threshold / margin
            candidate = best["boundary"] * scale
            scaled = margin_of(candidate)
            solves += 1
            if scaled > best["margin"]:
                best = {"margin": scaled, "boundary": candidate}
            if scaled > threshold:
                break
    best["solves"] = solves
    best["found"] = best["margin"] > threshold
    return best
