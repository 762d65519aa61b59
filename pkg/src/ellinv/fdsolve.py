"""Finite-difference Dirichlet solver for second-order systems on boxes.

Uniform grids in 2 or 3 dimensions, one m-vector per node.  Interior rows
discretize sum_jk A_jk d2u/dx_j dx_k + sum_j A_j du/dx_j = 0 with the
classical 3-point second-difference, the 4-point cross stencil for mixed
pairs and central first differences; boundary rows pin the data through
identity blocks.  Unknowns are ordered lexicographically by node with the
m components innermost.

The operator convention is the full double sum over (j, k), so a stored
off-diagonal coefficient A_jk contributes 2 A_jk d2/dx_j dx_k in total.
Cross stencils break the discrete maximum principle in general; invariance
audits therefore compare margins against a C*h^2 tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bodies import pull_inside


class SolveError(RuntimeError):
    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


@dataclass(frozen=True, eq=False)
class BoxGrid:
    """Axis-aligned box with a uniform node grid per axis (>= 3 nodes)."""

    lo: np.ndarray
    hi: np.ndarray
    shape: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).copy()
        hi = np.asarray(self.hi, dtype=float).copy()
        shape = tuple(int(s) for s in self.shape)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be equal-length vectors")
        if lo.shape[0] not in (2, 3):
            raise ValueError("grids support 2 or 3 space dimensions")
        if len(shape) != lo.shape[0] or any(s < 3 for s in shape):
            raise ValueError("need at least 3 nodes per axis")
        if np.any(hi <= lo):
            raise ValueError("need lo < hi per axis")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "shape", shape)

    @property
    def n(self):
        return self.lo.shape[0]

    @property
    def spacing(self):
        return (self.hi - self.lo) / (np.array(self.shape) - 1)

    @property
    def num_nodes(self):
        return int(np.prod(self.shape))

    def axes(self):
        return [np.linspace(self.lo[j], self.hi[j], self.shape[j]) for j in range(self.n)]

    def node_coords(self):
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.n)

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for j in range(self.n):
            sl = [slice(None)] * self.n
            sl[j] = 0
            mask[tuple(sl)] = True
            sl[j] = -1
            mask[tuple(sl)] = True
        return mask.reshape(-1)

    def interior_flat(self):
        return np.nonzero(~self.boundary_mask())[0]

    def boundary_flat(self):
        return np.nonzero(self.boundary_mask())[0]


@dataclass(frozen=True, eq=False)
class GridField:
    """Values with shape grid.shape + (m,)."""

    grid: BoxGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).copy()
        if vals.shape[:-1] != self.grid.shape or vals.ndim != self.grid.n + 1:
            raise ValueError("values must have shape grid.shape + (m,)")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def m(self):
        return self.values.shape[-1]

    @property
    def flat(self):
        return self.values.reshape(-1, self.m)

    @classmethod
    def from_function(cls, grid, fn, m):
        coords = grid.node_coords()
        vals = np.array([np.asarray(fn(x), dtype=float) for x in coords])
        return cls(grid, vals.reshape(grid.shape + (m,)))

    def gradient(self):
        """Per-node flattened gradient eta[i*n + j] = d u_i / d x_j."""
        axes = self.grid.axes()
        grads = []
        for i in range(self.m):
            gi = np.gradient(self.values[..., i], *axes, edge_order=2)
            grads.extend(gi if isinstance(gi, (list, tuple)) else [gi])
        return np.stack(grads, axis=-1).reshape(-1, self.m * self.grid.n)


class SystemMatrix:
    """Assembled sparse operator with lazily cached factorizations."""

    def __init__(self, grid, m, matrix):
        self.grid = grid
        self.m = m
        self.matrix = matrix.tocsr()
        self._lu = None
        self._ilu = None

    def lu(self):
        if self._lu is None:
            self._lu = spla.splu(self.matrix.tocsc())
        return self._lu

    def ilu(self):
        if self._ilu is None:
            self._ilu = spla.spilu(self.matrix.tocsc(), drop_tol=1e-6, fill_factor=20)
        return self._ilu


@dataclass(frozen=True, eq=False)
class LinearProblem:
    system: SystemMatrix
    rhs: np.ndarray


@dataclass(frozen=True)
class SolverConfig:
    method: str = "gmres"
    rtol: float = 1e-10
    maxiter: int = 5000
    restart: int = 100


@dataclass
class SolveReport:
    method: str
    iterations: int
    residual: float
    picard_iterations: int = None
    picard_residual: float = None
    picard_history: list = field(default_factory=list)


def _interior_samples(coeffs, grid, eta_nodes=None):
    """Second- and first-order blocks at every interior node.

    Returns (a2, a1) with shapes (Ni, n, n, m, m) and (Ni, n, m, m) or None.
    ``eta_nodes`` switches to the quasilinear sampler frozen at the given
    per-node gradients.
    """
    interior = grid.interior_flat()
    coords = grid.node_coords()[interior]
    n, m = coeffs.n, coeffs.m
    if eta_nodes is not None:
        a2 = np.array([coeffs.quasilinear_at(x, e) for x, e in zip(coords, eta_nodes)])
        return interior, a2, None
    if coeffs.is_constant:
        a2 = np.broadcast_to(coeffs.second_order, (interior.size, n, n, m, m))
    else:
        a2 = np.array([coeffs.second_order_at(x) for x in coords])
    a1 = None
    if coeffs.has_first_order:
        if callable(coeffs.first_order):
            a1 = np.array([coeffs.first_order_at(x) for x in coords])
        else:
            a1 = np.broadcast_to(coeffs.first_order, (interior.size, n, m, m))
    return interior, a2, a1


def _assemble_from_samples(grid, m, interior, a2, a1):
    shape = grid.shape
    h = grid.spacing
    n = grid.n
    midx = np.array(np.unravel_index(interior, shape))
    rows, cols, data = [], [], []
    comp_r = np.arange(m)[None, :, None]
    comp_c = np.arange(m)[None, None, :]

    def add(offset, blocks):
        nbr = np.ravel_multi_index(midx + np.asarray(offset)[:, None], shape)
        r = (interior * m)[:, None, None] + comp_r
        c = (nbr * m)[:, None, None] + comp_c
        rows.append(np.broadcast_to(r, blocks.shape).ravel())
        cols.append(np.broadcast_to(c, blocks.shape).ravel())
        data.append(blocks.ravel())

    zero = np.zeros(n, dtype=int)
    for j in range(n):
        ej = np.eye(n, dtype=int)[j]
        blk = a2[:, j, j] / h[j] ** 2
        add(ej, blk)
        add(-ej, blk)
        add(zero, -2.0 * blk)
        for k in range(j + 1, n):
            ek = np.eye(n, dtype=int)[k]
            blk = 2.0 * a2[:, j, k] / (4.0 * h[j] * h[k])
            add(ej + ek, blk)
            add(-(ej + ek), blk)
            add(ej - ek, -blk)
            add(ek - ej, -blk)
        if a1 is not None:
            blk = a1[:, j] / (2.0 * h[j])
            add(ej, blk)
            add(-ej, -blk)

    bdry = grid.boundary_flat()
    eye_idx = (bdry[:, None] * m + np.arange(m)[None, :]).ravel()
    rows.append(eye_idx)
    cols.append(eye_idx)
    data.append(np.ones(eye_idx.size))

    size = grid.num_nodes * m
    mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    )
    return SystemMatrix(grid, m, mat)


def assemble_matrix(coeffs, grid):
    interior, a2, a1 = _interior_samples(coeffs, grid)
    return _assemble_from_samples(grid, coeffs.m, interior, a2, a1)


def boundary_rhs(grid, boundary):
    """Right-hand side pinning the boundary nodes of a GridField."""
    vals = boundary.flat
    rhs = np.zeros(grid.num_nodes * vals.shape[1])
    b = grid.boundary_flat()
    for p in range(vals.shape[1]):
        rhs[b * vals.shape[1] + p] = vals[b, p]
    return rhs


def assemble_linear(coeffs, grid, boundary):
    """Sparse linear problem for the Dirichlet data in ``boundary``."""
    if boundary.grid is not grid and boundary.grid.shape != grid.shape:
        raise ValueError("boundary field lives on a different grid")
    return LinearProblem(assemble_matrix(coeffs, grid), boundary_rhs(grid, boundary))


def solve_linear(problem, config=SolverConfig()):
    """Solve to relative residual <= config.rtol; deterministic per config.

    'gmres' (default) and 'bicgstab' run with an ILU preconditioner and
    raise SolveError on non-convergence; 'direct' applies a cached sparse LU
    and still verifies the residual.
    """
    mat = problem.system.matrix
    b = problem.rhs
    bnorm = np.linalg.norm(b)
    scale = bnorm if bnorm > 0 else 1.0
    iterations = 0
    if config.method == "direct":
        x = problem.system.lu().solve(b)
        iterations = 1
    elif config.method in ("gmres", "bicgstab"):
        ilu = problem.system.ilu()
        precond = spla.LinearOperator(mat.shape, ilu.solve)
        count = {"it": 0}

        def cb(_):
            count["it"] += 1

        kw = dict(M=precond, maxiter=config.maxiter, callback=cb)
        if config.method == "gmres":
            kw.update(restart=config.restart, callback_type="pr_norm")
        solver = spla.gmres if config.method == "gmres" else spla.bicgstab
        try:
            x, info = solver(mat, b, rtol=config.rtol, atol=0.0, **kw)
        except TypeError:  # older scipy spells the tolerance 'tol'
            x, info = solver(mat, b, tol=config.rtol, atol=0.0, **kw)
        iterations = count["it"]
        if info != 0:
            res = float(np.linalg.norm(mat @ x - b) / scale)
            raise SolveError(f"{config.method} did not converge (info={info})",
                             residual=res)
    else:
        raise ValueError(f"unknown method {config.method!r}")
    residual = float(np.linalg.norm(mat @ x - b) / scale)
    if residual > max(config.rtol, 1e-9) * 10 and config.method == "direct":
        raise SolveError("direct solve produced a large residual", residual=residual)
    m = problem.system.m
    grid = problem.system.grid
    fld = GridField(grid, x.reshape(grid.shape + (m,)))
    return fld, SolveReport(config.method, iterations, residual)


def solve_dirichlet(coeffs, grid, boundary, config=SolverConfig()):
    return solve_linear(assemble_linear(coeffs, grid, boundary), config)


@dataclass(frozen=True)
class PicardConfig:
    omega: float = 0.7
    ptol: float = 1e-8
    max_iter: int = 60
    solver: SolverConfig = SolverConfig()


def solve_quasilinear(coeffs, grid, boundary, picard=PicardConfig()):
    """Picard iteration freezing the gradient in B_jk(x, eta).

    Starts from the solution with eta = 0, then alternates gradient
    evaluation (central differences) with damped linear solves
    u <- (1 - omega) u + omega u_new until the max-norm update falls
    below ptol.  Raises SolveError with the update history otherwise.
    """
    if not coeffs.has_quasilinear:
        raise ValueError("system has no quasilinear part")
    interior = grid.interior_flat()
    rhs = boundary_rhs(grid, boundary)
    zero_eta = np.zeros((interior.size, coeffs.m * coeffs.n))
    system = _assemble_from_samples(grid, coeffs.m, interior, *(
        _interior_samples(coeffs, grid, zero_eta)[1:]))
    u, rep = solve_linear(LinearProblem(system, rhs), picard.solver)
    history = []
    for it in range(1, picard.max_iter + 1):
        eta = u.gradient()[interior]
        _, a2, a1 = _interior_samples(coeffs, grid, eta)
        system = _assemble_from_samples(grid, coeffs.m, interior, a2, a1)
        u_new, rep = solve_linear(LinearProblem(system, rhs), picard.solver)
        merged = (1.0 - picard.omega) * u.values + picard.omega * u_new.values
        diff = float(np.abs(merged - u.values).max())
        u = GridField(grid, merged)
        history.append(diff)
        if diff <= picard.ptol:
            rep.picard_iterations = it
            rep.picard_residual = diff
            rep.picard_history = history
            return u, rep
    raise SolveError("Picard iteration did not converge", residual=history[-1],
                     history=history)


@dataclass
class InvarianceAudit:
    passed: bool
    max_margin: float
    worst_node: tuple
    worst_point: np.ndarray
    boundary_max_margin: float
    dmp_margin: float
    audit_tol: float


def audit_invariance(solution, body, *, C=None, audit_tol=None):
    """Check that the solved field stays in the body up to a C*h^2 margin.

    Boundary values must lie in the body (tolerance 1e-9), otherwise the
    audit is meaningless and a ValueError is raised.  The report records the
    worst interior violation margin, its node, and the margin relative to
    the boundary extremes (a discrete maximum-principle indicator).
    """
    grid = solution.grid
    vals = solution.flat
    bidx = grid.boundary_flat()
    iidx = grid.interior_flat()
    bmargins = body.violation_margins(vals[bidx])
    if bmargins.max(initial=-np.inf) > 1e-9:
        raise ValueError("boundary data lies outside the body")
    margins = body.violation_margins(vals[iidx])
    k = int(np.argmax(margins))
    worst_flat = iidx[k]
    h = float(grid.spacing.max())
    if audit_tol is None:
        if C is None:
            C = 10.0 * float(np.abs(vals).max())
        audit_tol = C * h * h
    max_margin = float(margins[k])
    bmax = float(bmargins.max())
    return InvarianceAudit(
        passed=max_margin <= audit_tol,
        max_margin=max_margin,
        worst_node=tuple(int(v) for v in np.unravel_index(worst_flat, grid.shape)),
        worst_point=grid.node_coords()[worst_flat],
        boundary_max_margin=bmax,
        dmp_margin=max_margin - bmax,
        audit_tol=float(audit_tol),
    )


def random_boundary_field(grid, body, rng, waves=3, amplitude=1.0, anchor=None):
    """Smooth random boundary data pulled into the body.

    Trigonometric fields with ``waves`` random frequencies per component are
    evaluated on the boundary nodes and projected into the body along
    segments toward an interior anchor.  Interior nodes are filled with the
    anchor so the array is body-valued everywhere.
    """
    m = body.dim
    coords = grid.node_coords()
    anchor = body.interior_point() if anchor is None else np.asarray(anchor, dtype=float)
    span = grid.hi - grid.lo
    vals = np.tile(anchor, (coords.shape[0], 1))
    b = grid.boundary_flat()
    raw = np.zeros((b.size, m))
    for p in range(m):
        acc = np.zeros(b.size)
        for _ in range(waves):
            k = rng.integers(1, 4, size=grid.n)
            phase = rng.uniform(0, 2 * np.pi)
            amp = amplitude * rng.uniform(0.2, 1.0)
            acc += amp * np.cos(2 * np.pi * (coords[b] * k / span).sum(axis=1) + phase)
        raw[:, p] = acc
    vals[b] = pull_inside(body, anchor[None, :] + raw, anchor=anchor)
    return GridField(grid, vals.reshape(grid.shape + (m,)))


def search_boundary_violation(coeffs, grid, body, rng, budget=200, threshold=0.0,
                              config=SolverConfig(method="direct"),
                              amplitudes=(1.0, 2.0, 4.0, 8.0)):
    """Random search for body-valued boundary data whose solution exits the body.

    Reuses one assembled matrix across all candidates and cycles the field
    amplitude through ``amplitudes`` so that some candidates hug the body
    boundary, where invariance failures surface.  Returns a dict with the
    best margin found, the boundary field achieving it, the number of solves
    spent, and whether the threshold was exceeded.
    """
    system = assemble_matrix(coeffs, grid)
    best = {"margin": -np.inf, "boundary": None, "solution": None}
    solves = 0
    for trial in range(budget):
        bnd = random_boundary_field(grid, body, rng,
                                    amplitude=amplitudes[trial % len(amplitudes)])
        sol, _ = solve_linear(LinearProblem(system, boundary_rhs(grid, bnd)), config)
        solves += 1
        margin = float(body.violation_margins(sol.flat[grid.interior_flat()]).max())
        if margin > best["margin"]:
            best = {"margin": margin, "boundary": bnd, "solution": sol}
        if margin > threshold:
            break
    best["solves"] = solves
    best["found"] = best["margin"] > threshold
    return best
