"""Structure classes of coefficient matrices admissible for a convex body.

For each catalogued body class there is a linear family of m x m matrices
that admit every outward normal of the body as a left eigenvector:

  * coordinates bounded on some index set  -> those rows are zero off the
    diagonal (``rows_zeroed_diagonal``); all coordinates bounded -> diagonal;
  * trailing coordinates in a ball        -> additionally equal diagonal
    entries on those rows (``rows_zeroed_equal_diagonal``);
  * a cone with exactly m independent facet normals -> matrices conjugate to
    a diagonal by the transposed normal matrix (``conjugated_diagonal``);
  * a cone with more than m facets, a ball, or any body carrying m+1 normals
    in general position -> scalar multiples of the identity.

``detect_factorization`` recognizes constant-coefficient operators of the
product shapes A . diag(L_1 .. L_m) and A . L from their tensors.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import bodies as _b
from .conditions import SystemCoefficients, ellipticity_constant, left_eigen_scalar

ROWS_ZEROED_DIAGONAL = "rows_zeroed_diagonal"
ROWS_ZEROED_EQUAL_DIAGONAL = "rows_zeroed_equal_diagonal"
CONJUGATED_DIAGONAL = "conjugated_diagonal"
SCALAR = "scalar"
DIAGONAL = "diagonal"
UNCONSTRAINED = "unconstrained"

DIAGONAL_FAMILY = "diagonal_family"
SCALAR_OPERATOR = "scalar_operator"


@dataclass(frozen=True, eq=False)
class StructureClass:
    """A linear family of admissible m x m matrices.

    ``rows`` lists the constrained row indices for the row-structured tags;
    ``normal_matrix`` holds the facet-normal columns N for the conjugated
    tag, where members take the form (t(N))^-1 D t(N) with D diagonal.
    """

    tag: str
    m: int
    rows: tuple = ()
    normal_matrix: np.ndarray = None
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(sorted(int(i) for i in self.rows)))
        if self.normal_matrix is not None:
            nm = np.asarray(self.normal_matrix, dtype=float).copy()
            nm.setflags(write=False)
            object.__setattr__(self, "normal_matrix", nm)

    def basis(self):
        """Basis matrices of the family as a linear space."""
        m, rows = self.m, set(self.rows)
        eye = np.eye(m)
        if self.tag == UNCONSTRAINED:
            return [np.outer(eye[i], eye[j]) for i in range(m) for j in range(m)]
        if self.tag == DIAGONAL:
            return [np.diag(eye[i]) for i in range(m)]
        if self.tag == SCALAR:
            return [np.eye(m)]
        if self.tag == ROWS_ZEROED_DIAGONAL:
            out = [np.outer(eye[i], eye[j]) for i in range(m) for j in range(m)
                   if i not in rows]
            out += [np.diag(eye[i]) for i in rows]
            return out
        if self.tag == ROWS_ZEROED_EQUAL_DIAGONAL:
            out = [np.outer(eye[i], eye[j]) for i in range(m) for j in range(m)
                   if i not in rows]
            shared = np.zeros((m, m))
            for i in rows:
                shared[i, i] = 1.0
            out.append(shared)
            return out
        if self.tag == CONJUGATED_DIAGONAL:
            nt = self.normal_matrix.T
            return [np.linalg.solve(nt, np.diag(eye[i]) @ nt) for i in range(m)]
        raise ValueError(f"unknown tag {self.tag!r}")

    def random_member(self, rng, scale=1.0):
        basis = self.basis()
        coeff = rng.uniform(-2.0, 2.0, size=len(basis)) * scale
        return sum(c * b for c, b in zip(coeff, basis))

    def constrained_entry_directions(self):
        """Unit entry matrices whose perturbation leaves the family.

        Empty for the conjugated and unconstrained tags, whose constraints
        are not aligned with single entries.
        """
        m, rows = self.m, set(self.rows)
        eye = np.eye(m)
        dirs = []
        if self.tag == DIAGONAL:
            dirs = [np.outer(eye[i], eye[j]) for i in range(m) for j in range(m) if i != j]
        elif self.tag == SCALAR:
            dirs = [np.outer(eye[i], eye[j]) for i in range(m) for j in range(m) if i != j]
            if m > 1:
                dirs += [np.diag(eye[i]) for i in range(m)]
        elif self.tag == ROWS_ZEROED_DIAGONAL:
            dirs = [np.outer(eye[i], eye[j]) for i in rows for j in range(m) if i != j]
        elif self.tag == ROWS_ZEROED_EQUAL_DIAGONAL:
            dirs = [np.outer(eye[i], eye[j]) for i in rows for j in range(m) if i != j]
            if len(rows) > 1:
                dirs += [np.diag(eye[i]) for i in rows]
        return dirs

    def random_off_family_direction(self, rng):
        """A matrix direction guaranteed to leave the family, entries O(1)."""
        dirs = self.constrained_entry_directions()
        if dirs:
            return dirs[rng.integers(len(dirs))].copy()
        if self.tag == UNCONSTRAINED:
            raise ValueError("the unconstrained family admits every matrix")
        basis = self.basis()
        bm = np.stack([b.ravel() for b in basis])
        q, _ = np.linalg.qr(bm.T)
        for _ in range(64):
            g = rng.standard_normal(self.m * self.m)
            res = g - q @ (q.T @ g)
            if np.linalg.norm(res) > 0.1 * np.linalg.norm(g):
                res = res / np.abs(res).max()
                return res.reshape(self.m, self.m)
        raise RuntimeError("could not find an off-family direction")


def _family_from_normals(normals, m):
    """Classify the admissible family directly from a finite normal set."""
    axes = {}
    all_axis = True
    for nu in normals:
        idx = int(np.argmax(np.abs(nu)))
        if abs(abs(nu[idx]) - 1.0) <= 1e-12 and np.abs(np.delete(nu, idx)).max(initial=0.0) <= 1e-12:
            axes[idx] = True
        else:
            all_axis = False
    if all_axis:
        rows = tuple(sorted(axes))
        if len(rows) == m:
            return StructureClass(DIAGONAL, m)
        return StructureClass(ROWS_ZEROED_DIAGONAL, m, rows=rows)
    if _has_generic_excess(normals, m):
        return StructureClass(SCALAR, m)
    return StructureClass(UNCONSTRAINED, m,
                          note="normal set matches no catalogued structure")


def _has_generic_excess(normals, m):
    """True when some m+1 normals have every m-subset linearly independent."""
    nrm = np.atleast_2d(np.asarray(normals, dtype=float))
    p = nrm.shape[0]
    if p < m + 1:
        return False
    pool = range(min(p, 12))
    for combo in itertools.combinations(pool, m + 1):
        sub = nrm[list(combo)]
        if all(abs(np.linalg.det(sub[list(rows)])) > 1e-10
               for rows in itertools.combinations(range(m + 1), m)):
            return True
    return False


def admissible_family(body):
    """The linear matrix family compatible with every normal of the body."""
    m = body.dim
    if isinstance(body, _b.PolyhedralAngle) or isinstance(body, _b.PolyhedralCylinder):
        rows = tuple(sorted(body.indices))
        if len(rows) == m:
            return StructureClass(DIAGONAL, m)
        return StructureClass(ROWS_ZEROED_DIAGONAL, m, rows=rows)
    if isinstance(body, _b.SphericalCylinder):
        if body.constrained == m:
            return StructureClass(SCALAR, m)
        return StructureClass(ROWS_ZEROED_EQUAL_DIAGONAL, m, rows=body.trailing)
    if isinstance(body, _b.Ball):
        return StructureClass(SCALAR, m)
    if isinstance(body, _b.PolyhedralCone):
        p = body.normals.shape[0]
        if p == m:
            return StructureClass(CONJUGATED_DIAGONAL, m, normal_matrix=body.normals.T)
        if p > m:
            return StructureClass(SCALAR, m)
        return StructureClass(UNCONSTRAINED, m,
                              note="cone with fewer facets than dimensions is not catalogued")
    if isinstance(body, _b.HalfSpace):
        return _family_from_normals([body.normal], m)
    if isinstance(body, _b.Polytope):
        return _family_from_normals(body.normals, m)
    if isinstance(body, _b.SampledSmooth):
        return _family_from_normals([nu for _, nu in body.normal_samples(max(2 * m + 2, 16))], m)
    return StructureClass(UNCONSTRAINED, m, note=f"variant {type(body).__name__} not catalogued")


def classify_matrix(mat, body, tol=1e-8, normal_budget=64):
    """Map each sampled normal to its left-eigenvector scalar, or None.

    Returns {tuple(nu): scalar} when the matrix admits every sampled normal
    of the body as a left eigenvector at the given relative tolerance, and
    None otherwise.
    """
    mat = np.asarray(mat, dtype=float)
    out = {}
    for _, nu in body.normal_samples(normal_budget):
        a = left_eigen_scalar(mat, nu, tol)
        if a is None:
            return None
        out[tuple(nu.tolist())] = a
    return out


def cone_conjugation(normals, diag):
    """Matrix (t(N))^-1 diag(d) t(N) for facet-normal columns N.

    Each normal becomes a left eigenvector of the result with its diagonal
    entry as eigenvalue.  Raises DegenerateBodyError when the normals are
    not safely independent (|det N| <= 1e-10).
    """
    nrm = np.atleast_2d(np.asarray(normals, dtype=float))
    m = nrm.shape[1]
    if nrm.shape[0] != m:
        raise ValueError("need exactly m facet normals")
    n_cols = nrm.T  # N carries the normals as columns
    if abs(np.linalg.det(n_cols)) <= 1e-10:
        raise _b.DegenerateBodyError("cone normals are numerically dependent",
                                     subset=tuple(range(m)))
    d = np.asarray(diag, dtype=float)
    if d.ndim == 1:
        d = np.diag(d)
    return np.linalg.solve(n_cols.T, d @ n_cols.T)


def alignment_solution_space(normals, rtol=1e-10):
    """Orthonormal basis of {M : t(M) nu is parallel to nu for all normals}.

    Stacks the linear conditions (I - nu nu^T) t(M) nu = 0 and returns the
    null-space basis reshaped to matrices.
    """
    nrm = np.atleast_2d(np.asarray(normals, dtype=float))
    m = nrm.shape[1]
    cmat = np.zeros((nrm.shape[0] * m, m * m))
    for j in range(m * m):
        e = np.zeros(m * m)
        e[j] = 1.0
        mat = e.reshape(m, m)
        vals = []
        for nu in nrm:
            w = mat.T @ nu
            vals.append(w - (w @ nu) * nu)
        cmat[:, j] = np.concatenate(vals)
    _, s, vt = np.linalg.svd(cmat)
    cutoff = rtol * (s[0] if s.size and s[0] > 0 else 1.0)
    null = vt[np.sum(s > cutoff):]
    return [row.reshape(m, m) for row in null]


def _pack_form(mat):
    n = mat.shape[0]
    return np.array([mat[j, k] for j in range(n) for k in range(j, n)])


def _unpack_form(vec, n):
    out = np.zeros((n, n))
    pos = 0
    for j in range(n):
        for k in range(j, n):
            out[j, k] = out[k, j] = vec[pos]
            pos += 1
    return out


@dataclass(frozen=True, eq=False)
class Factorization:
    """Result of detect_factorization.

    kind is 'diagonal_family', 'scalar_operator' or None.  ``mixing`` holds
    the m x m matrix b, ``forms`` the per-column scalar symbols as (m, n, n)
    symmetric matrices normalized so the d2/dx_n^2 coefficient equals 1.
    ``column_ratios`` and ``shared_ratio`` are the rank-1 defect ratios
    sigma_2/sigma_1 of the per-column and whole-tensor stacks.
    """

    kind: object
    mixing: np.ndarray
    forms: np.ndarray
    residual: float
    column_ratios: tuple
    shared_ratio: float
    delta_estimate: float = None
    note: str = ""


def factorized_coefficients(mixing, forms, first_order=None):
    """Build the (n, n, m, m) tensor with entries A_jk[p, s] = b_ps * form_s[j, k]."""
    mixing = np.asarray(mixing, dtype=float)
    forms = np.asarray(forms, dtype=float)
    m = mixing.shape[0]
    if forms.ndim == 2:
        forms = np.repeat(forms[None, :, :], m, axis=0)
    n = forms.shape[1]
    tensor = np.einsum("ps,sjk->jkps", mixing, forms)
    return SystemCoefficients(n, m, tensor, first_order)


def _ratio(svals):
    if svals.size < 2 or svals[0] <= 0:
        return 0.0
    return float(svals[1] / svals[0])


def detect_factorization(coeffs, tol=1e-8, *, gauge_tol=1e-9, det_tol=1e-10):
    """Detect product structure A . diag(L_1..L_m) or A . L in constant coefficients.

    For each state column s the (p, s) entries across all spatial index
    pairs are stacked into an m x (n(n+1)/2) matrix; rank one in every
    column yields the diagonal family, rank one of the whole stack yields a
    single shared scalar operator.  Forms are normalized so the d2/dx_n^2
    coefficient is 1 (construction rejected if that coefficient vanishes),
    the mixing matrix must be nondegenerate, and the reconstruction is
    checked for strong ellipticity.
    """
    if not coeffs.is_constant:
        raise ValueError("factorization detection needs constant coefficients")
    n, m = coeffs.n, coeffs.m
    tensor = coeffs.second_order
    npack = n * (n + 1) // 2
    stack = np.zeros((m * m, npack))
    for p in range(m):
        for s in range(m):
            stack[p * m + s] = _pack_form(tensor[:, :, p, s])
    scale = np.linalg.norm(stack)
    if scale == 0:
        raise ValueError("zero second-order part")

    u_full, s_full, vt_full = np.linalg.svd(stack, full_matrices=False)
    shared_ratio = _ratio(s_full)
    col_ratios, col_forms, col_mix = [], [], []
    for s in range(m):
        sub = stack[s::m]
        u, sv, vt = np.linalg.svd(sub, full_matrices=False)
        col_ratios.append(_ratio(sv))
        col_forms.append(vt[0])
        col_mix.append(u[:, 0] * sv[0])
    col_ratios = tuple(col_ratios)

    def reject(note):
        return Factorization(None, None, None, None, col_ratios, shared_ratio, note=note)

    if shared_ratio <= tol:
        form_vec = vt_full[0]
        mix = (u_full[:, 0] * s_full[0]).reshape(m, m)
        kind = SCALAR_OPERATOR
        forms_raw = [form_vec] * m
        mixes = [mix[:, s] for s in range(m)]
    elif all(r <= tol for r in col_ratios):
        kind = DIAGONAL_FAMILY
        forms_raw = col_forms
        mixes = col_mix
    else:
        return reject("per-column stacks are not rank one")

    forms = np.zeros((m, n, n))
    mixing = np.zeros((m, m))
    for s in range(m):
        fmat = _unpack_form(forms_raw[s], n)
        t = fmat[n - 1, n - 1]
        if t < 0:
            fmat, t = -fmat, -t
            mixes[s] = -mixes[s]
        if t <= gauge_tol * np.abs(fmat).max():
            return reject("normalizing coefficient of d2/dx_n^2 vanishes")
        forms[s] = fmat / t
        mixing[:, s] = mixes[s] * t

    det = np.linalg.det(mixing)
    if abs(det) <= det_tol * max(np.abs(mixing).max(), 1.0) ** m:
        return reject("mixing matrix is numerically singular")

    recon = np.einsum("ps,sjk->jkps", mixing, forms)
    residual = float(np.linalg.norm(recon - tensor) / np.linalg.norm(tensor))
    delta = ellipticity_constant(
        SystemCoefficients(n, m, recon), [np.zeros(n)], sphere_budget=128)
    if delta <= 0:
        return Factorization(None, mixing, forms, residual, col_ratios, shared_ratio,
                             delta_estimate=delta,
                             note="reconstruction is not strongly elliptic")
    return Factorization(kind, mixing, forms, residual, col_ratios, shared_ratio,
                         delta_estimate=delta)
