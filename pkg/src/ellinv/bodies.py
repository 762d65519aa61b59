"""Closed convex bodies described through their outward unit normals.

Every body here is the intersection of its supporting half-spaces
``{u : (u - a, nu) <= 0}``.  Checkers consume finite samples of
boundary-point/normal pairs; membership tests and violation margins use
exact per-variant formulas where the geometry is analytic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.stats import norm as _gauss
from scipy.stats import qmc

TOL_GEOM = 1e-9      # default tolerance of geometric predicates
UNIT_TOL = 1e-12     # stored normals must be unit vectors to this accuracy


class DegenerateBodyError(ValueError):
    """Body data is geometrically degenerate (e.g. dependent cone normals).

    ``subset`` carries the indices of the offending normal subset when the
    degeneracy is a rank defect.
    """

    def __init__(self, message, subset=None):
        super().__init__(message)
        self.subset = subset


def _as_float_array(x):
    a = np.array(x, dtype=float)
    a.setflags(write=False)
    return a


def _check_unit(nu, what="normal"):
    nu = np.asarray(nu, dtype=float)
    nrm = np.linalg.norm(nu)
    if not np.isfinite(nrm) or abs(nrm - 1.0) > UNIT_TOL:
        raise ValueError(f"{what} must be a unit vector (|nu| = {nrm!r})")
    return _as_float_array(nu / nrm)


def unit_sphere_samples(dim, count):
    """Deterministic quasi-uniform sample of the unit sphere in R^dim.

    dim 1 returns (+1, -1) capped at two points; dim 2 uses equally spaced
    angles starting at angle 0; dim >= 3 pushes a (non-scrambled) Halton
    sequence through the inverse normal CDF and normalizes.  In every case
    enlarging ``count`` keeps the earlier points, so sample sets are nested
    under refinement.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if dim < 1:
        raise ValueError("dim must be positive")
    if dim == 1:
        pts = np.array([[1.0], [-1.0]])
        return pts[: min(count, 2)].copy()
    if dim == 2:
        theta = 2.0 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(theta), np.sin(theta)])
    halton = qmc.Halton(d=dim, scramble=False)
    halton.fast_forward(1)  # skip the all-zero first point
    raw = _gauss.ppf(halton.random(count))
    nrm = np.linalg.norm(raw, axis=1)
    bad = nrm < 1e-12
    if np.any(bad):
        raw[bad] = np.eye(dim)[0]
        nrm[bad] = 1.0
    return raw / nrm[:, None]


class ConvexBody:
    """Base class.  Subclasses provide dim, normal_samples and margins."""

    @property
    def dim(self):
        raise NotImplementedError

    def normal_samples(self, budget=32):
        """Return a list of (boundary_point, outward_unit_normal) pairs.

        Polyhedral variants return their full finite facet set regardless of
        ``budget``; smooth variants return ``budget`` quasi-uniform samples.
        """
        raise NotImplementedError

    def violation_margin(self, u):
        """Signed distance-like margin: <= 0 inside, > 0 outside.

        Positive values lower-bound how far ``u`` sits outside some
        supporting half-space of the body.
        """
        raise NotImplementedError

    def violation_margins(self, points):
        """Vectorized margins for an (N, m) array of points."""
        points = np.asarray(points, dtype=float)
        return np.array([self.violation_margin(u) for u in points])

    def contains(self, u, tol=0.0):
        if tol < 0:
            raise ValueError("tol must be nonnegative")
        return bool(self.violation_margin(np.asarray(u, dtype=float)) <= tol)

    def interior_point(self):
        raise NotImplementedError

    def support_offset(self, a, nu, r):
        """Inward offset beta so that a + t - beta*nu stays in the body for
        every tangential displacement t (t . nu = 0, |t| <= r).

        Returns None when no offset can absorb tangential moves of size r.
        """
        raise NotImplementedError


class _LinearBody(ConvexBody):
    """Shared machinery for bodies cut out by finitely many half-spaces."""

    def _constraints(self):
        """Return (normals (p, m), anchors (p, m))."""
        raise NotImplementedError

    def violation_margin(self, u):
        nrm, anc = self._constraints()
        u = np.asarray(u, dtype=float)
        return float(np.max(np.einsum("pi,pi->p", nrm, u[None, :] - anc)))

    def violation_margins(self, points):
        nrm, anc = self._constraints()
        points = np.asarray(points, dtype=float)
        shifted = points[:, None, :] - anc[None, :, :]
        return np.einsum("npi,pi->np", shifted, nrm).max(axis=1)

    def support_offset(self, a, nu, r):
        nrm, anc = self._constraints()
        a = np.asarray(a, dtype=float)
        nu = np.asarray(nu, dtype=float)
        if r < 0:
            raise ValueError("r must be nonnegative")
        c = np.einsum("pi,pi->p", nrm, a[None, :] - anc)
        d = nrm @ nu
        tang = nrm - np.outer(d, nu)
        grow = c + r * np.linalg.norm(tang, axis=1)
        pos = d > 1e-12
        beta = float(max(0.0, np.max(grow[pos] / d[pos], initial=-np.inf)))
        if np.any(grow[~pos] - beta * d[~pos] > TOL_GEOM * (1.0 + r)):
            return None
        return beta

    def interior_point(self):
        # Chebyshev-style center: maximize the common slack t subject to
        # nu_p . x + t <= nu_p . a_p inside a generous bounding box.
        nrm, anc = self._constraints()
        m = self.dim
        x0 = anc.mean(axis=0)
        box = 2.0 + np.abs(anc).max(initial=0.0) + np.abs(x0).max(initial=0.0)
        a_ub = np.hstack([nrm, np.ones((nrm.shape[0], 1))])
        b_ub = np.einsum("pi,pi->p", nrm, anc)
        bounds = [(x0[i] - box, x0[i] + box) for i in range(m)] + [(0.0, box)]
        cost = np.zeros(m + 1)
        cost[-1] = -1.0
        res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
        if not res.success or res.x[-1] <= TOL_GEOM:
            raise DegenerateBodyError("no interior point found")
        return res.x[:m].copy()


@dataclass(frozen=True, eq=False)
class HalfSpace(_LinearBody):
    """{u : (u - anchor, normal) <= 0} with a unit outward normal."""

    normal: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "normal", _check_unit(self.normal))
        object.__setattr__(self, "anchor", _as_float_array(self.anchor))
        if self.anchor.shape != self.normal.shape:
            raise ValueError("anchor and normal dimensions differ")

    @property
    def dim(self):
        return self.normal.shape[0]

    def _constraints(self):
        return self.normal[None, :], self.anchor[None, :]

    def normal_samples(self, budget=32):
        return [(self.anchor.copy(), self.normal.copy())]

    def support_offset(self, a, nu, r):
        return 0.0

    def interior_point(self):
        return self.anchor - self.normal


@dataclass(frozen=True, eq=False)
class PolyhedralAngle(_LinearBody):
    """Coordinates listed in ``indices`` bounded below: u_i >= lower_i."""

    dimension: int
    indices: tuple
    lower: np.ndarray

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) == 0 or len(set(idx)) != len(idx):
            raise ValueError("indices must be nonempty and distinct")
        if not all(0 <= i < self.dimension for i in idx):
            raise ValueError("indices out of range")
        object.__setattr__(self, "indices", idx)
        low = _as_float_array(self.lower)
        if low.shape != (len(idx),):
            raise ValueError("lower must give one bound per constrained index")
        object.__setattr__(self, "lower", low)

    @property
    def dim(self):
        return self.dimension

    def _corner(self):
        c = np.zeros(self.dimension)
        c[list(self.indices)] = self.lower
        return c

    def _constraints(self):
        m = self.dimension
        nrm = np.zeros((len(self.indices), m))
        anc = np.zeros((len(self.indices), m))
        for row, (i, lo) in enumerate(zip(self.indices, self.lower)):
            nrm[row, i] = -1.0
            anc[row, i] = lo
        return nrm, anc

    def normal_samples(self, budget=32):
        corner = self._corner()
        out = []
        for i in self.indices:
            nu = np.zeros(self.dimension)
            nu[i] = -1.0
            out.append((corner.copy(), nu))
        return out

    def interior_point(self):
        p = self._corner()
        p[list(self.indices)] += 1.0
        return p


@dataclass(frozen=True, eq=False)
class PolyhedralCylinder(_LinearBody):
    """Coordinates listed in ``indices`` confined to slabs lower_i <= u_i <= upper_i."""

    dimension: int
    indices: tuple
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) == 0 or len(set(idx)) != len(idx):
            raise ValueError("indices must be nonempty and distinct")
        if not all(0 <= i < self.dimension for i in idx):
            raise ValueError("indices out of range")
        object.__setattr__(self, "indices", idx)
        low = _as_float_array(self.lower)
        up = _as_float_array(self.upper)
        if low.shape != (len(idx),) or up.shape != (len(idx),):
            raise ValueError("lower/upper must give one bound per constrained index")
        if not np.all(low < up):
            raise ValueError("need lower < upper for every constrained index")
        object.__setattr__(self, "lower", low)
        object.__setattr__(self, "upper", up)

    @property
    def dim(self):
        return self.dimension

    def _corner(self):
        c = np.zeros(self.dimension)
        c[list(self.indices)] = self.lower
        return c

    def _constraints(self):
        m = self.dimension
        k = len(self.indices)
        nrm = np.zeros((2 * k, m))
        anc = np.zeros((2 * k, m))
        for row, (i, lo, up) in enumerate(zip(self.indices, self.lower, self.upper)):
            nrm[2 * row, i] = -1.0
            anc[2 * row, i] = lo
            nrm[2 * row + 1, i] = 1.0
            anc[2 * row + 1, i] = up
        return nrm, anc

    def normal_samples(self, budget=32):
        out = []
        for i, lo, up in zip(self.indices, self.lower, self.upper):
            base = self._corner()
            nu = np.zeros(self.dimension)
            nu[i] = -1.0
            out.append((base.copy(), nu.copy()))
            top = self._corner()
            top[i] = up
            nu2 = np.zeros(self.dimension)
            nu2[i] = 1.0
            out.append((top, nu2))
        return out

    def interior_point(self):
        p = np.zeros(self.dimension)
        p[list(self.indices)] = 0.5 * (self.lower + self.upper)
        return p


@dataclass(frozen=True, eq=False)
class SphericalCylinder(ConvexBody):
    """Trailing ``constrained`` coordinates confined to a ball of given radius.

    The first dim - constrained coordinates are free; the set is
    {u : u_{m-k+1}^2 + ... + u_m^2 <= radius^2}.
    """

    dimension: int
    constrained: int
    radius: float

    def __post_init__(self):
        if not (1 <= self.constrained <= self.dimension):
            raise ValueError("constrained count must lie in 1..dimension")
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def dim(self):
        return self.dimension

    @property
    def trailing(self):
        return tuple(range(self.dimension - self.constrained, self.dimension))

    def violation_margin(self, u):
        u = np.asarray(u, dtype=float)
        return float(np.linalg.norm(u[list(self.trailing)]) - self.radius)

    def violation_margins(self, points):
        points = np.asarray(points, dtype=float)
        return np.linalg.norm(points[:, list(self.trailing)], axis=1) - self.radius

    def normal_samples(self, budget=32):
        gammas = unit_sphere_samples(self.constrained, budget)
        out = []
        for g in gammas:
            nu = np.zeros(self.dimension)
            nu[list(self.trailing)] = g
            out.append((self.radius * nu, nu))
        return out

    def support_offset(self, a, nu, r):
        if r < 0:
            raise ValueError("r must be nonnegative")
        if r >= self.radius:
            return None
        return float(self.radius - np.sqrt(self.radius**2 - r**2))

    def interior_point(self):
        return np.zeros(self.dimension)


@dataclass(frozen=True, eq=False)
class PolyhedralCone(_LinearBody):
    """{u : (u - vertex, nu_i) <= 0} for finitely many unit normals.

    With p >= dim facets every dim-subset of normals must be linearly
    independent (determinant above 1e-10 in absolute value); otherwise a
    DegenerateBodyError names the failing subset.
    """

    vertex: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        v = _as_float_array(self.vertex)
        object.__setattr__(self, "vertex", v)
        nrm = np.atleast_2d(np.array(self.normals, dtype=float))
        if nrm.shape[1] != v.shape[0]:
            raise ValueError("normal dimension does not match vertex")
        nrm = np.vstack([_check_unit(row) for row in nrm])
        m = v.shape[0]
        if nrm.shape[0] >= m:
            for subset in itertools.combinations(range(nrm.shape[0]), m):
                if abs(np.linalg.det(nrm[list(subset)])) <= 1e-10:
                    raise DegenerateBodyError(
                        f"cone normals {subset} are linearly dependent",
                        subset=subset,
                    )
        nrm.setflags(write=False)
        object.__setattr__(self, "normals", nrm)

    @property
    def dim(self):
        return self.vertex.shape[0]

    def _constraints(self):
        anc = np.repeat(self.vertex[None, :], self.normals.shape[0], axis=0)
        return self.normals, anc

    def normal_samples(self, budget=32):
        return [(self.vertex.copy(), nu.copy()) for nu in self.normals]


@dataclass(frozen=True, eq=False)
class Polytope(_LinearBody):
    """Intersection of the half-spaces {(u - anchor_i, nu_i) <= 0}."""

    normals: np.ndarray
    anchors: np.ndarray

    def __post_init__(self):
        nrm = np.atleast_2d(np.array(self.normals, dtype=float))
        anc = np.atleast_2d(np.array(self.anchors, dtype=float))
        if nrm.shape != anc.shape or nrm.shape[0] == 0:
            raise ValueError("need matching, nonempty normal and anchor lists")
        nrm = np.vstack([_check_unit(row) for row in nrm])
        nrm.setflags(write=False)
        anc = _as_float_array(anc)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "anchors", anc)

    @property
    def dim(self):
        return self.normals.shape[1]

    def _constraints(self):
        return self.normals, self.anchors

    def normal_samples(self, budget=32):
        return [(a.copy(), nu.copy()) for nu, a in zip(self.normals, self.anchors)]


@dataclass(frozen=True, eq=False)
class Ball(ConvexBody):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _as_float_array(self.center))
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def dim(self):
        return self.center.shape[0]

    def violation_margin(self, u):
        u = np.asarray(u, dtype=float)
        return float(np.linalg.norm(u - self.center) - self.radius)

    def violation_margins(self, points):
        points = np.asarray(points, dtype=float)
        return np.linalg.norm(points - self.center, axis=1) - self.radius

    def normal_samples(self, budget=32):
        nus = unit_sphere_samples(self.dim, budget)
        return [(self.center + self.radius * nu, nu) for nu in nus]

    def support_offset(self, a, nu, r):
        if r < 0:
            raise ValueError("r must be nonnegative")
        if r >= self.radius:
            return None
        return float(self.radius - np.sqrt(self.radius**2 - r**2))

    def interior_point(self):
        return self.center.copy()


@dataclass(frozen=True, eq=False)
class SampledSmooth(ConvexBody):
    """Body known only through a boundary sampler.

    ``sampler(budget)`` must return (point, outward unit normal) pairs.  A
    base sample drawn at construction defines the working outer
    approximation used for membership, margins and support offsets.
    """

    dimension: int
    sampler: object
    base_budget: int = 64

    def __post_init__(self):
        if self.base_budget < 1:
            raise ValueError("base_budget must be positive")
        pairs = self._validated(self.sampler(self.base_budget))
        object.__setattr__(self, "_base", pairs)

    def _validated(self, raw):
        pairs = []
        for a, nu in raw:
            a = _as_float_array(a)
            nu = _check_unit(nu)
            if a.shape != (self.dimension,) or nu.shape != (self.dimension,):
                raise ValueError("sampler returned wrong dimension")
            pairs.append((a, nu))
        if not pairs:
            raise ValueError("sampler returned no pairs")
        return pairs

    @property
    def dim(self):
        return self.dimension

    def _constraints(self):
        nrm = np.array([nu for _, nu in self._base])
        anc = np.array([a for a, _ in self._base])
        return nrm, anc

    def normal_samples(self, budget=32):
        # pairs are drawn from the frozen base sample so that every emitted
        # normal is a constraint of the working outer approximation (keeps
        # contains and normal_samples mutually consistent); budgets beyond
        # base_budget return the full base
        if budget >= len(self._base):
            picks = self._base
        else:
            idx = np.linspace(0, len(self._base) - 1, budget).round().astype(int)
            picks = [self._base[i] for i in idx]
        return [(a.copy(), nu.copy()) for a, nu in picks]

    def violation_margin(self, u):
        return _LinearBody.violation_margin(self, u)

    def violation_margins(self, points):
        return _LinearBody.violation_margins(self, points)

    def support_offset(self, a, nu, r):
        return _LinearBody.support_offset(self, a, nu, r)

    def interior_point(self):
        return _LinearBody.interior_point(self)


def orthant(dimension, lower=None):
    """Convenience: the full positive-type orthant u_i >= lower_i."""
    if lower is None:
        lower = np.zeros(dimension)
    return PolyhedralAngle(dimension, tuple(range(dimension)), lower)


def box(lower, upper):
    """Convenience: the axis-aligned parallelepiped lower <= u <= upper."""
    lower = np.asarray(lower, dtype=float)
    return PolyhedralCylinder(lower.shape[0], tuple(range(lower.shape[0])), lower, upper)


def pull_inside(body, points, anchor=None, slack=0.0):
    """Map each point into the body along the segment toward an interior anchor.

    The violation margin is convex along such segments, so bisection on the
    segment parameter lands on the feasible side.  Points already satisfying
    margin <= -slack are returned unchanged.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    anchor = body.interior_point() if anchor is None else np.asarray(anchor, dtype=float)
    if body.violation_margin(anchor) >= -abs(slack):
        raise ValueError("anchor is not strictly interior at the requested slack")
    need = body.violation_margins(pts) > -slack
    lo = np.zeros(pts.shape[0])
    hi = np.ones(pts.shape[0])
    segs = pts - anchor
    if np.any(need):
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            inside = body.violation_margins(
                anchor + mid[need, None] * segs[need]) <= -slack
            lo[need] = np.where(inside, mid[need], lo[need])
            hi[need] = np.where(inside, hi[need], mid[need])
    t = np.where(need, lo, 1.0)
    out = anchor + t[:, None] * segs
    return out if np.asarray(points).ndim > 1 else out[0]
