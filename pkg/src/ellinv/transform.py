"""Normalized matrix-valued averaging transforms and invariance witnesses.

A discrete kernel assigns to each evaluation point x a finite node set with
nonnegative weights w_i and matrices K_i normalized so sum_i K_i w_i = I.
The transform (Tu)(x) = sum_i K_i u(y_i) w_i maps a convex body into itself
for every body-valued u exactly when, for each node and each outward normal
nu of the body, t(K_i) nu = g nu with g >= 0.  When the criterion fails,
``build_witness`` produces an explicit body-valued input that the transform
carries outside the body.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conditions import normal_alignment_split

NORMALIZATION_TOL = 1e-10


class NormalizationError(ValueError):
    pass


class WitnessError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KernelPoint:
    """Nodes, weights and matrices attached to one evaluation point."""

    label: object
    nodes: tuple
    weights: np.ndarray
    matrices: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).copy()
        k = np.asarray(self.matrices, dtype=float).copy()
        nodes = tuple(self.nodes)
        if w.ndim != 1 or len(nodes) != w.shape[0] or w.shape[0] < 1:
            raise ValueError("need one weight per node and at least one node")
        if k.shape[:1] != w.shape or k.ndim != 3 or k.shape[1] != k.shape[2]:
            raise ValueError("matrices must have shape (len(nodes), m, m)")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        if not np.all(np.isfinite(k)):
            raise ValueError("matrices must be finite")
        w.setflags(write=False)
        k.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "matrices", k)

    @property
    def m(self):
        return self.matrices.shape[1]

    def normalization_defect(self):
        total = np.einsum("i,ipq->pq", self.weights, self.matrices)
        return float(np.abs(total - np.eye(self.m)).max())


@dataclass(frozen=True, eq=False)
class DiscreteKernel:
    """A family of kernel points sharing the state dimension m."""

    m: int
    points: tuple

    def __post_init__(self):
        pts = tuple(self.points)
        if not pts:
            raise ValueError("kernel needs at least one evaluation point")
        labels = set()
        for pt in pts:
            if pt.m != self.m:
                raise ValueError("kernel point dimension mismatch")
            if pt.label in labels:
                raise ValueError(f"duplicate evaluation point label {pt.label!r}")
            labels.add(pt.label)
            defect = pt.normalization_defect()
            if defect > NORMALIZATION_TOL:
                raise NormalizationError(
                    f"kernel at {pt.label!r} is not normalized (defect {defect:.3e})")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "_by_label", {pt.label: pt for pt in pts})

    def point(self, x):
        try:
            return self._by_label[x]
        except KeyError:
            raise KeyError(f"kernel has no evaluation point labelled {x!r}") from None

    @property
    def labels(self):
        return [pt.label for pt in self.points]


def apply_transform(kernel, u, x):
    """Evaluate (Tu)(x) = sum_i K_i u(y_i) w_i for u given as {node: vector}."""
    pt = kernel.point(x)
    vals = np.array([np.asarray(u[node], dtype=float) for node in pt.nodes])
    if vals.shape != (len(pt.nodes), kernel.m):
        raise ValueError("u must supply an m-vector for every node")
    return np.einsum("i,ipq,iq->p", pt.weights, pt.matrices, vals)


@dataclass(frozen=True)
class KernelFailure:
    x: object
    node: object
    normal: tuple
    residual: float
    scalar: float


@dataclass
class KernelReport:
    passed: bool
    scalar_table: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


def check_kernel_invariance(kernel, body, normal_budget=64, tol=1e-8):
    """Check t(K_i) nu = g nu with g >= -tol at every node and sampled normal.

    Nodes with zero weight are skipped: they cannot influence the transform.
    The report's scalar_table maps (x, node, tuple(nu)) to the recovered g.
    """
    if body.dim != kernel.m:
        raise ValueError("body dimension does not match the kernel")
    pairs = body.normal_samples(normal_budget)
    failures, table = [], {}
    for pt in kernel.points:
        for node, w, mat in zip(pt.nodes, pt.weights, pt.matrices):
            if w == 0.0:
                continue
            for _, nu in pairs:
                g, res = normal_alignment_split(mat, nu)
                rn = float(np.linalg.norm(res))
                key = (pt.label, node, tuple(nu.tolist()))
                table[key] = g
                if rn > tol or g < -tol:
                    failures.append(KernelFailure(pt.label, node, tuple(nu.tolist()), rn, g))
    return KernelReport(passed=not failures, scalar_table=table, failures=failures)


def _residual_witness(body, pt, a, nu, alpha, tol):
    """Body-valued input exploiting nonzero residuals t(K_i) nu - g nu."""
    live = pt.weights > 0
    splits = [normal_alignment_split(mat, nu) for mat in pt.matrices]
    res = np.array([f for _, f in splits])
    res_norms = np.linalg.norm(res, axis=1)
    lam = float(np.max(res_norms[live], initial=0.0))
    mass = float(np.sum(pt.weights[live] * np.where(res_norms[live] > tol,
                                                    res_norms[live] ** 2, 0.0)))

    def attempt(al):
        beta = body.support_offset(a, nu, al * lam)
        if beta is None:
            return None
        return beta if mass - beta / al > 0 else None

    if alpha is None:
        al = 1.0
        for _ in range(41):
            beta = attempt(al)
            if beta is not None:
                break
            al *= 0.5
        else:
            raise WitnessError("no step size produced a positive violation bound")
    else:
        al = float(alpha)
        beta = attempt(al)
        if beta is None:
            suggestion, sug_beta = al, None
            for _ in range(41):
                suggestion *= 0.5
                sug_beta = attempt(suggestion)
                if sug_beta is not None:
                    break
            hint = f"; alpha={suggestion:.3e} works" if sug_beta is not None else ""
            raise WitnessError(f"alpha too large for the boundary-offset bracket{hint}")
    # zero-weight nodes cannot influence the transform; park them safely inside
    return {node: a + (al * f if w > 0 else 0.0) - beta * nu
            for node, w, f in zip(pt.nodes, pt.weights, res)}


def _negative_scalar_witness(body, pt, a, nu, tol):
    """Body-valued input exploiting nodes with negative alignment scalar g."""
    gs = np.array([normal_alignment_split(mat, nu)[0] for mat in pt.matrices])
    live = pt.weights > 0
    neg = live & (gs < -tol)
    if not neg.any():
        raise WitnessError("kernel satisfies the invariance conditions at this point")
    # deepest inward step along -nu that stays in the body, capped at 1
    lo, hi = 0.0, 1.0
    if body.contains(a - nu, 1e-12):
        depth = 1.0
    else:
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if body.contains(a - mid * nu, 1e-12):
                lo = mid
            else:
                hi = mid
        depth = 0.99 * lo
    if depth <= 0:
        raise WitnessError("could not step inward from the boundary point")
    neg_mass = float(-np.sum(pt.weights[neg] * gs[neg]))
    rest_mass = float(np.sum(pt.weights[live & ~neg] * gs[live & ~neg]))
    eps = 0.0 if rest_mass <= 0 else min(1.0, 0.5 * neg_mass / rest_mass)
    return {node: (a - depth * nu) if isneg else (a - eps * depth * nu)
            for node, isneg in zip(pt.nodes, neg)}


def build_witness(kernel, body, x, a, nu, alpha=None, tol=1e-8):
    """Construct a body-valued input u with (Tu)(x) outside the body.

    Requires the invariance check to fail at (x, nu): either some node
    matrix has a residual off the normal direction (handled by a tangential
    perturbation of size alpha, with an inward offset that keeps the inputs
    in the body), or all residuals vanish but some alignment scalar is
    negative (handled by staggered inward steps).  With ``alpha=None`` the
    step starts at 1 and halves until the violation bound becomes positive
    (at most 40 halvings).
    """
    if body.dim != kernel.m:
        raise ValueError("body dimension does not match the kernel")
    if alpha is not None and not alpha > 0:
        raise ValueError("alpha must be positive")
    pt = kernel.point(x)
    a = np.asarray(a, dtype=float)
    nu = np.asarray(nu, dtype=float)
    live = pt.weights > 0
    res_norms = np.array([np.linalg.norm(normal_alignment_split(mat, nu)[1])
                          for mat in pt.matrices])
    if np.any(res_norms[live] > tol):
        witness = _residual_witness(body, pt, a, nu, alpha, tol)
    else:
        witness = _negative_scalar_witness(body, pt, a, nu, tol)
    for node, val in witness.items():
        if not body.contains(val, 1e-9):
            raise WitnessError(f"witness value at node {node!r} left the body")
    return witness


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def double_layer_kernel(polygon, x_points, refine=1):
    """Solid-angle averaging kernel of a convex polygon, seen from inside.

    Each polygon edge is split into ``refine`` equal segments; the weight of
    a segment at an interior point x is its subtended angle divided by 2 pi,
    so the weights of every evaluation point sum to one exactly (up to
    rounding) and all matrices are the 1 x 1 identity.  Returns the kernel
    together with the (num_nodes, 2) array of segment midpoints; node labels
    are indices into that array.
    """
    poly = np.asarray(polygon, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
        raise ValueError("polygon must be a list of at least three 2-d vertices")
    if refine < 1:
        raise ValueError("refine must be positive")
    nv = poly.shape[0]
    edges = poly[(np.arange(nv) + 1) % nv] - poly
    crosses = _cross2(edges, edges[(np.arange(nv) + 1) % nv])
    if np.any(crosses <= 0):
        raise ValueError("polygon must be strictly convex with counterclockwise vertices")

    starts, ends = [], []
    for v in range(nv):
        for r in range(refine):
            starts.append(poly[v] + edges[v] * (r / refine))
            ends.append(poly[v] + edges[v] * ((r + 1) / refine))
    starts = np.array(starts)
    ends = np.array(ends)
    mids = 0.5 * (starts + ends)

    pts = []
    for label, x in enumerate(np.atleast_2d(np.asarray(x_points, dtype=float))):
        v1 = starts - x
        v2 = ends - x
        angles = np.arctan2(_cross2(v1, v2), np.einsum("ij,ij->i", v1, v2))
        if np.any(angles <= 0):
            raise ValueError(f"evaluation point {x.tolist()} is not strictly interior")
        weights = angles / (2.0 * np.pi)
        mats = np.ones((len(weights), 1, 1))
        pts.append(KernelPoint(label, tuple(range(len(weights))), weights, mats))
    return DiscreteKernel(1, tuple(pts)), mids
