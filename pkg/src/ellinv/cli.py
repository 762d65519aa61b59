"""Batch command line front end.

Each invocation reads one JSON problem bundle, dispatches to the library,
and writes a deterministic artifact set into the output directory:

* ``verdict.json`` — machine-parseable outcome with stable field names,
* ``report.txt`` — human-readable summary (no timestamps),
* ``*.csv`` — detail tables sufficient to reproduce any reported failure,
* ``figures/*.png`` — rendered views of the same data (``--no-figures`` skips),
* ``run.log`` — the only artifact that carries timestamps.

Exit codes: 0 = pass/success, 1 = checked failure (a condition or an
invariance property is violated — a valid scientific outcome), 2 =
operational error (malformed input, solver breakdown).

Bundle schema (all indices 1-based, matching the ``x1``/``eta1`` expression
names; see the README for worked examples)::

    {
      "system": {
        "n": 2, "m": 2,
        "second_order": {"1,1": [[...]], "1,2": [[...]], "2,2": [[...]]},
        "first_order": {"1": [[...]]},                    # optional
        "gradient_coefficients": {"1,1": [["..."]]},      # optional, may use eta
        "gradient_bound": 10.0                            # optional
      },
      "body": {"type": "orthant", "dimension": 2},
      "kernel": {"m": 1, "points": [{"x": "p0", "nodes": [...],
                                      "weights": [...], "matrices": [...]}]},
      "domain": {"lo": [0, 0], "hi": [1, 1], "shape": [17, 17]},
      "halfspace": {"cell": [6.2832], "shape": [64], "heights": [0.1, 0.5]},
      "boundary": {"expr": ["x1*x2", "0"]} | {"constant": [1, 0]},
      "x_samples": [[0, 0], [0.5, 0.5]],
      "witness": {"x": "p0", "anchor": [0, 0], "normal": [-1, 0], "alpha": null}
    }

Matrix entries may be numbers or expression strings in ``x1..xn`` (and
``eta``/``eta1..`` inside ``gradient_coefficients``, where ``eta`` holds the
flattened gradient with eta[(i-1)*n + j] = d u_i / d x_j, 1-based).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bodies as _bodies
from . import figures as _figures
from . import halfspace as _hs
from . import structure as _structure
from . import transform as _transform
from .conditions import (SystemCoefficients, check_linear_conditions,
                         check_quasilinear_conditions, default_eta_samples)
from .expressions import Expression, ExpressionError, vector_field
from .fdsolve import (BoxGrid, GridField, SolveError, SolverConfig, audit_invariance,
                      random_boundary_field, search_boundary_violation,
                      solve_dirichlet, solve_quasilinear)

PASS, CHECKED_FAIL, ERROR = 0, 1, 2


class BundleError(ValueError):
    """Malformed bundle or command line input; mapped to exit code 2."""


# ---------------------------------------------------------------------------
# serialization helpers

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _vec_cell(vec):
    """Vector-valued CSV cell: components joined by semicolons."""
    if vec is None:
        return ""
    return ";".join(format(float(v), ".17g") for v in np.atleast_1d(np.asarray(vec)))


def _write_csv(path, header, rows, seed):
    with open(path, "w") as fh:
        fh.write(f"# seed={seed}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _write_verdict(out, verdict):
    path = out / "verdict.json"
    path.write_text(json.dumps(_jsonable(verdict), sort_keys=True, indent=2) + "\n")
    return path


def _write_report(out, lines):
    path = out / "report.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# bundle parsing

def _load_bundle(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise BundleError(f"input file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise BundleError(
            f"{path}: line {exc.lineno}, column {exc.colno}: invalid JSON: {exc.msg}"
        ) from None


def _need(bundle, key, subcommand):
    if key not in bundle:
        raise BundleError(f"bundle is missing the '{key}' section required by {subcommand}")
    return bundle[key]


def _index_pair(key):
    parts = str(key).split(",")
    try:
        j, k = (int(p) - 1 for p in parts)
    except ValueError:
        raise BundleError(f"matrix key '{key}' is not of the form 'j,k'") from None
    if len(parts) != 2 or j < 0 or k < 0:
        raise BundleError(f"matrix key '{key}' must use two 1-based indices 'j,k'")
    return j, k


def _compile_matrix(entries, m, names, where):
    """An m x m table of numbers/expression strings -> array or env-function."""
    entries = list(entries)
    if len(entries) != m or any(len(row) != m for row in entries):
        raise BundleError(f"{where}: matrix must be {m}x{m}")
    has_expr = any(isinstance(v, str) for row in entries for v in row)
    if not has_expr:
        return np.asarray(entries, dtype=float)
    compiled = [[Expression(v, names) if isinstance(v, str) else float(v)
                 for v in row] for row in entries]

    def call(env):
        return np.array([[c(env) if isinstance(c, Expression) else c for c in row]
                         for row in compiled], dtype=float)

    return call


def _x_env(x):
    return {f"x{i + 1}": float(v) for i, v in enumerate(np.atleast_1d(x))}


def _pair_table(spec, n, primary, alias):
    """Second-order table: dict keyed 'j,k' or list in lexicographic j<=k order."""
    raw = spec.get(primary, spec.get(alias))
    if raw is None:
        return {}
    if isinstance(raw, dict):
        return {_index_pair(key): mat for key, mat in raw.items()}
    pairs = [(j, k) for j in range(n) for k in range(j, n)]
    if len(raw) != len(pairs):
        raise BundleError(f"{primary} list must have {len(pairs)} matrices "
                          f"(upper-triangular pairs in order)")
    return dict(zip(pairs, raw))


def _axis_table(spec, n, primary, alias):
    raw = spec.get(primary, spec.get(alias))
    if raw is None:
        return {}
    if isinstance(raw, dict):
        return {int(key) - 1: mat for key, mat in raw.items()}
    if len(raw) != n:
        raise BundleError(f"{primary} list must have {n} matrices")
    return dict(enumerate(raw))


def build_system(spec):
    """SystemCoefficients from the bundle's ``system`` section."""
    try:
        n, m = int(spec["n"]), int(spec["m"])
    except KeyError as exc:
        raise BundleError(f"system section is missing '{exc.args[0]}'") from None
    x_names = {f"x{i + 1}" for i in range(n)}
    eta_names = x_names | {"eta"} | {f"eta{i + 1}" for i in range(n * m)}
    try:
        a2 = {key: _compile_matrix(mat, m, x_names, f"second_order[{key}]")
              for key, mat in _pair_table(spec, n, "second_order", "A2").items()}
        a1 = {key: _compile_matrix(mat, m, x_names, f"first_order[{key}]")
              for key, mat in _axis_table(spec, n, "first_order", "A1").items()}
        quasi = {key: _compile_matrix(mat, m, eta_names,
                                      f"gradient_coefficients[{key}]")
                 for key, mat in _pair_table(spec, n, "gradient_coefficients",
                                             "quasilinear").items()}
    except ExpressionError as exc:
        raise BundleError(f"system expression table: {exc}") from None
    if not a2 and not quasi:
        raise BundleError("system needs 'second_order' or 'gradient_coefficients'")

    def tensor_at(table, env):
        out = np.zeros((n, n, m, m))
        for (j, k), mat in table.items():
            val = mat(env) if callable(mat) else mat
            out[j, k] = val
            out[k, j] = val
        return out

    quasilinear = None
    if quasi:
        def quasilinear(x, eta):
            env = _x_env(x)
            eta = np.asarray(eta, dtype=float)
            env["eta"] = eta
            env.update({f"eta{i + 1}": float(v) for i, v in enumerate(eta)})
            return tensor_at(quasi, env)

    if a2:
        if any(callable(mat) for mat in a2.values()):
            second = lambda x: tensor_at(a2, _x_env(x))  # noqa: E731
        else:
            second = tensor_at(a2, {})
    else:
        second = lambda x: quasilinear(x, np.zeros(n * m))  # noqa: E731

    first = None
    if a1:
        if any(callable(mat) for mat in a1.values()):
            def first(x):
                env = _x_env(x)
                out = np.zeros((n, m, m))
                for j, mat in a1.items():
                    out[j] = mat(env) if callable(mat) else mat
                return out
        else:
            first = np.zeros((n, m, m))
            for j, mat in a1.items():
                first[j] = mat

    return SystemCoefficients(n, m, second, first, quasilinear,
                              spec.get("gradient_bound", spec.get("bound")))


def build_body(spec):
    """ConvexBody from the bundle's ``body`` section (1-based indices)."""
    kind = spec.get("kind", spec.get("type"))
    try:
        if kind == "half_space":
            return _bodies.HalfSpace(np.asarray(spec["normal"], dtype=float),
                                     np.asarray(spec["anchor"], dtype=float))
        if kind in ("orthant", "angle"):
            dim = int(spec["dimension"])
            idx = [i - 1 for i in spec.get("indices", range(1, dim + 1))]
            lower = np.asarray(spec.get("lower", np.zeros(len(idx))), dtype=float)
            return _bodies.PolyhedralAngle(dim, tuple(idx), lower)
        if kind in ("box", "cylinder"):
            lower = np.asarray(spec["lo"] if "lo" in spec else spec["lower"],
                               dtype=float)
            upper = np.asarray(spec["hi"] if "hi" in spec else spec["upper"],
                               dtype=float)
            dim = int(spec.get("dimension", len(lower)))
            idx = [i - 1 for i in spec.get("indices", range(1, len(lower) + 1))]
            return _bodies.PolyhedralCylinder(dim, tuple(idx), lower, upper)
        if kind == "spherical_cylinder":
            return _bodies.SphericalCylinder(int(spec["dimension"]),
                                             int(spec["constrained"]),
                                             float(spec["radius"]))
        if kind == "cone":
            return _bodies.PolyhedralCone(np.asarray(spec["vertex"], dtype=float),
                                          np.asarray(spec["normals"], dtype=float))
        if kind == "polytope":
            return _bodies.Polytope(np.asarray(spec["normals"], dtype=float),
                                    np.asarray(spec["anchors"], dtype=float))
        if kind == "ball":
            return _bodies.Ball(np.asarray(spec["center"], dtype=float),
                                float(spec["radius"]))
    except KeyError as exc:
        raise BundleError(f"body section is missing '{exc.args[0]}'") from None
    except ValueError as exc:
        raise BundleError(f"body section: {exc}") from None
    raise BundleError(
        f"unknown body type '{kind}' (known: half_space, orthant, angle, box, "
        "cylinder, spherical_cylinder, cone, polytope, ball)")


def _kernel_point(p, m):
    nodes = p["nodes"]
    if nodes and isinstance(nodes[0], dict):
        # canonical form: nodes are {"w": weight, "K": row-major matrix} objects
        labels = [entry.get("node", i) for i, entry in enumerate(nodes)]
        weights = np.asarray([entry["w"] for entry in nodes], dtype=float)
        matrices = np.asarray([np.reshape(entry["K"], (m, m)) for entry in nodes],
                              dtype=float)
    else:
        labels = list(nodes)
        weights = np.asarray(p["weights"], dtype=float)
        matrices = np.asarray(p["matrices"], dtype=float)
    return _transform.KernelPoint(label=p["x"], nodes=labels, weights=weights,
                                  matrices=matrices)


def build_kernel(spec):
    try:
        m = int(spec["m"])
        return _transform.DiscreteKernel(m, [_kernel_point(p, m)
                                             for p in spec["points"]])
    except KeyError as exc:
        raise BundleError(f"kernel section is missing '{exc.args[0]}'") from None
    except (ValueError, _transform.NormalizationError) as exc:
        raise BundleError(f"kernel section: {exc}") from None


def _x_samples(bundle, coeffs):
    if "x_samples" in bundle:
        return [np.asarray(x, dtype=float) for x in bundle["x_samples"]]
    if coeffs.is_constant and not coeffs.has_quasilinear:
        return [np.zeros(coeffs.n)]
    raise BundleError("variable coefficients need an 'x_samples' section")


def _build_grid(bundle, args, subcommand):
    dom = _need(bundle, "domain", subcommand)
    try:
        lo = np.asarray(dom["lo"], dtype=float)
        hi = np.asarray(dom["hi"], dtype=float)
        shape = tuple(int(s) for s in dom["shape"])
    except KeyError as exc:
        raise BundleError(f"domain section is missing '{exc.args[0]}'") from None
    if args.grid:
        shape = (int(args.grid),) * len(lo)
    try:
        return BoxGrid(lo, hi, shape)
    except ValueError as exc:
        raise BundleError(f"domain section: {exc}") from None


def _boundary_field(bundle, grid, m, subcommand):
    spec = _need(bundle, "boundary", subcommand)
    if "constant" in spec:
        const = np.asarray(spec["constant"], dtype=float)
        if const.shape != (m,):
            raise BundleError(f"boundary constant must have {m} components")
        return GridField.from_function(grid, lambda x: const, m)
    if "expr" not in spec:
        raise BundleError("boundary section needs 'expr' or 'constant'")
    exprs = list(spec["expr"])
    if len(exprs) != m:
        raise BundleError(f"boundary needs {m} component expressions")
    names = {f"x{i + 1}" for i in range(grid.n)}
    try:
        fn = vector_field(exprs, names)
    except ExpressionError as exc:
        raise BundleError(f"boundary expression: {exc}") from None
    return GridField.from_function(grid, lambda x: fn(_x_env(x)), m)


def _halfspace_setup(bundle, args, coeffs, subcommand):
    spec = _need(bundle, "halfspace", subcommand)
    d = coeffs.n - 1
    cell_raw = spec.get("cell", spec.get("L"))
    shape_raw = spec.get("shape", spec.get("N"))
    if cell_raw is None or shape_raw is None:
        raise BundleError("halfspace section needs 'cell'/'L' and 'shape'/'N'")
    cell = np.atleast_1d(np.asarray(cell_raw, dtype=float))
    if cell.shape == (1,) and d > 1:
        cell = np.full(d, cell[0])
    shape = tuple(int(s) for s in np.atleast_1d(shape_raw))
    if len(shape) == 1 and d > 1:
        shape = shape * d
    heights = spec.get("heights", [0.1, 0.5, 1.0])
    if args.heights:
        try:
            heights = [float(h) for h in args.heights.split(",")]
        except ValueError:
            raise BundleError(f"cannot parse --heights '{args.heights}'") from None
    if args.grid:
        shape = (int(args.grid),) * d
    return cell, shape, [float(h) for h in heights]


def _tangential_boundary(bundle, cell, shape, m, subcommand):
    spec = _need(bundle, "boundary", subcommand)
    axes = [np.arange(s) * (c / s) for s, c in zip(shape, cell)]
    mesh = np.meshgrid(*axes, indexing="ij")
    if "constant" in spec:
        const = np.asarray(spec["constant"], dtype=float)
        if const.shape != (m,):
            raise BundleError(f"boundary constant must have {m} components")
        return np.tile(const, tuple(shape) + (1,))
    if "expr" not in spec:
        raise BundleError("boundary section needs 'expr' or 'constant'")
    exprs = list(spec["expr"])
    if len(exprs) != m:
        raise BundleError(f"boundary needs {m} component expressions")
    names = {f"y{i + 1}" for i in range(len(shape))}
    try:
        fn = vector_field(exprs, names)
    except ExpressionError as exc:
        raise BundleError(f"boundary expression: {exc}") from None
    env = {f"y{i + 1}": mesh[i] for i in range(len(shape))}
    vals = fn(env)
    want = tuple(shape) + (m,)
    return np.broadcast_to(vals, want).copy() if vals.shape != want else vals


# ---------------------------------------------------------------------------
# subcommand handlers: each returns (verdict dict, report lines, exit code)

def _cmd_check_conditions(args, bundle, out):
    coeffs = build_system(_need(bundle, "system", "check-conditions"))
    body = build_body(_need(bundle, "body", "check-conditions"))
    xs = _x_samples(bundle, coeffs)
    tol = args.tol if args.tol is not None else 1e-8
    budget = args.budget or 64
    if coeffs.has_quasilinear:
        report = check_quasilinear_conditions(
            coeffs, body, xs, default_eta_samples(coeffs.n, coeffs.m), budget, tol)
    else:
        report = check_linear_conditions(coeffs, body, xs, budget, tol)

    scalar_rows = [
        (tag, j + 1, k + 1, _vec_cell(xk), _vec_cell(ek), _vec_cell(nk), val)
        for ((tag, j, k), xk, ek, nk), val in sorted(
            report.scalar_fields.items(), key=lambda kv: repr(kv[0]))
    ]
    artifacts = [str(_write_csv(out / "scalars.csv",
                                ["tag", "j", "k", "x", "eta", "normal", "scalar"],
                                scalar_rows, args.seed).name)]
    if report.failures:
        rows = [(_vec_cell(f.x), _vec_cell(f.eta), _vec_cell(f.normal),
                 " ".join([str(f.index[0])] + [str(i + 1) for i in f.index[1:]]),
                 f.residual)
                for f in report.failures]
        artifacts.append(str(_write_csv(out / "failures.csv",
                                        ["x", "eta", "normal", "index", "residual"],
                                        rows, args.seed).name))
    if not args.no_figures and scalar_rows:
        fig = out / "figures" / "scalars.png"
        labels = [f"{r[0]}[{r[1]}{r[2]}]" for r in scalar_rows[:60]]
        _figures.save_scalar_table(fig, list(zip(labels, [r[6] for r in scalar_rows[:60]])),
                                   f"recovered eigen-scalars (seed {args.seed})")
        artifacts.append(str(Path("figures") / fig.name))

    verdict = {
        "passed": report.passed,
        "delta_estimate": report.delta_estimate,
        "reduced_form_min": report.reduced_form_min,
        "failure_count": len(report.failures),
        "tolerance": tol,
        "artifacts": artifacts,
    }
    lines = [f"delta estimate: {report.delta_estimate:.6g}",
             f"scalar entries recovered: {len(scalar_rows)}",
             f"failures: {len(report.failures)}"]
    return verdict, lines, PASS if report.passed else CHECKED_FAIL


def _cmd_classify(args, bundle, out):
    coeffs = build_system(_need(bundle, "system", "classify"))
    if not coeffs.is_constant:
        raise BundleError("classify needs constant coefficient matrices")
    body = build_body(_need(bundle, "body", "classify"))
    tol = args.tol if args.tol is not None else 1e-8
    budget = args.budget or 64
    family = _structure.admissible_family(body)

    rows, all_ok = [], True
    mats = [(f"A2_{j + 1}{k + 1}", coeffs.second_order[j, k])
            for j in range(coeffs.n) for k in range(j, coeffs.n)]
    if coeffs.has_first_order:
        mats += [(f"A1_{j + 1}", coeffs.first_order[j]) for j in range(coeffs.n)]
    for name, mat in mats:
        scalars = _structure.classify_matrix(mat, body, tol, budget)
        ok = scalars is not None
        all_ok &= ok
        smin = min(scalars.values()) if ok and scalars else ""
        smax = max(scalars.values()) if ok and scalars else ""
        rows.append((name, ok, smin, smax))
    artifacts = [str(_write_csv(out / "classification.csv",
                                ["matrix", "admissible", "scalar_min", "scalar_max"],
                                rows, args.seed).name)]
    verdict = {
        "passed": all_ok,
        "family": family.tag,
        "family_note": family.note,
        "matrices": {name: bool(ok) for name, ok, _, _ in rows},
        "tolerance": tol,
        "artifacts": artifacts,
    }
    lines = [f"admissible family for the body: {family.tag}"]
    if family.note:
        lines.append(f"note: {family.note}")
    lines += [f"{name}: {'admissible' if ok else 'NOT admissible'}"
              for name, ok, _, _ in rows]
    return verdict, lines, PASS if all_ok else CHECKED_FAIL


def _cmd_detect_factorization(args, bundle, out):
    coeffs = build_system(_need(bundle, "system", "detect-factorization"))
    if not coeffs.is_constant:
        raise BundleError("detect-factorization needs constant coefficients")
    tol = args.tol if args.tol is not None else 1e-8
    fact = _structure.detect_factorization(coeffs, tol)
    artifacts = []
    if fact.kind is not None:
        artifacts.append(str(_write_csv(
            out / "mixing.csv", [f"col{j + 1}" for j in range(coeffs.m)],
            [tuple(row) for row in fact.mixing], args.seed).name))
        form_rows = [(s + 1, j + 1, k + 1, fact.forms[s][j, k])
                     for s in range(len(fact.forms))
                     for j in range(coeffs.n) for k in range(j, coeffs.n)]
        artifacts.append(str(_write_csv(out / "forms.csv",
                                        ["operator", "j", "k", "coefficient"],
                                        form_rows, args.seed).name))
    verdict = {
        "passed": fact.kind is not None,
        "kind": fact.kind,
        "b": None if fact.kind is None else [list(row) for row in fact.mixing],
        "forms": None if fact.kind is None else [
            [[form[j, k] for k in range(coeffs.n)] for j in range(coeffs.n)]
            for form in fact.forms],
        "column_ratios": list(fact.column_ratios),
        "shared_ratio": fact.shared_ratio,
        "residual": fact.residual,
        "delta_estimate": fact.delta_estimate,
        "note": fact.note,
        "tolerance": tol,
        "artifacts": artifacts,
    }
    lines = [f"kind: {fact.kind}",
             f"singular value ratios per column: "
             f"{', '.join(f'{r:.3g}' for r in fact.column_ratios)}",
             f"shared-operator ratio: {fact.shared_ratio:.3g}"]
    if fact.kind is not None:
        lines.append(f"reconstruction residual: {fact.residual:.3g}")
    if fact.note:
        lines.append(f"note: {fact.note}")
    return verdict, lines, PASS if fact.kind is not None else CHECKED_FAIL


def _cmd_check_transform(args, bundle, out):
    kernel = build_kernel(_need(bundle, "kernel", "check-transform"))
    body = build_body(_need(bundle, "body", "check-transform"))
    tol = args.tol if args.tol is not None else 1e-8
    budget = args.budget or 64
    report = _transform.check_kernel_invariance(kernel, body, budget, tol)
    rows = [(x, node, _vec_cell(nu), g) for (x, node, nu), g in
            sorted(report.scalar_table.items(), key=lambda kv: repr(kv[0]))]
    artifacts = [str(_write_csv(out / "scalars.csv",
                                ["x", "node", "normal", "scalar"], rows, args.seed).name)]
    if report.failures:
        frows = [(f.x, f.node, _vec_cell(f.normal), f.residual, f.scalar)
                 for f in report.failures]
        artifacts.append(str(_write_csv(out / "failures.csv",
                                        ["x", "node", "normal", "residual", "scalar"],
                                        frows, args.seed).name))
    if not args.no_figures and rows:
        fig = out / "figures" / "kernel_scalars.png"
        _figures.save_scalar_table(fig, [(f"{r[0]}/{r[1]}", r[3]) for r in rows[:60]],
                                   f"kernel eigen-scalars (seed {args.seed})")
        artifacts.append(str(Path("figures") / fig.name))
    verdict = {
        "passed": report.passed,
        "failure_count": len(report.failures),
        "scalar_count": len(rows),
        "min_scalar": min((r[3] for r in rows), default=None),
        "tolerance": tol,
        "artifacts": artifacts,
    }
    lines = [f"kernel points checked: {len(kernel.points)}",
             f"scalar entries recovered: {len(rows)}",
             f"failures: {len(report.failures)}"]
    return verdict, lines, PASS if report.passed else CHECKED_FAIL


def _cmd_witness(args, bundle, out):
    kernel = build_kernel(_need(bundle, "kernel", "witness"))
    body = build_body(_need(bundle, "body", "witness"))
    spec = _need(bundle, "witness", "witness")
    tol = args.tol if args.tol is not None else 1e-8
    try:
        x = spec["x"]
        anchor = np.asarray(spec["anchor"], dtype=float)
        normal = np.asarray(spec["normal"], dtype=float)
    except KeyError as exc:
        raise BundleError(f"witness section is missing '{exc.args[0]}'") from None
    alpha = spec.get("alpha")
    try:
        values = _transform.build_witness(kernel, body, x, anchor, normal,
                                          None if alpha is None else float(alpha), tol)
    except _transform.WitnessError as exc:
        verdict = {"passed": False, "reason": str(exc), "x": x,
                   "tolerance": tol, "artifacts": []}
        return verdict, [f"no witness produced: {exc}"], CHECKED_FAIL
    image = _transform.apply_transform(kernel, values, x)
    margin = float(body.violation_margin(image))
    nodes = kernel.point(x).nodes
    rows = [(node, _vec_cell(values[node])) for node in nodes]
    artifacts = [str(_write_csv(out / "witness.csv", ["node", "value"],
                                rows, args.seed).name)]
    if not args.no_figures and kernel.m >= 2:
        fig = out / "figures" / "witness.png"
        _figures.save_witness_scatter(
            fig, np.array([values[node] for node in nodes]), anchor, normal,
            f"witness input at x={x} (seed {args.seed})")
        artifacts.append(str(Path("figures") / fig.name))
    verdict = {
        "passed": margin > 0,
        "x": x,
        "transform_value": image,
        "violation_margin": margin,
        "tolerance": tol,
        "artifacts": artifacts,
    }
    lines = [f"witness constructed at x={x} over {len(rows)} nodes",
             f"transform value: {np.array2string(image, precision=6)}",
             f"violation margin of the transform value: {margin:.6g}"]
    return verdict, lines, PASS if margin > 0 else CHECKED_FAIL


def _solution_csv(out, grid, field, seed, name="solution.csv"):
    coords = grid.node_coords()
    vals = field.flat
    header = [f"x{i + 1}" for i in range(grid.n)] + \
             [f"u{p + 1}" for p in range(vals.shape[1])]
    rows = [tuple(coords[i]) + tuple(vals[i]) for i in range(coords.shape[0])]
    return _write_csv(out / name, header, rows, seed)


def _cmd_solve_box(args, bundle, out):
    coeffs = build_system(_need(bundle, "system", "solve-box"))
    grid = _build_grid(bundle, args, "solve-box")
    if grid.n != coeffs.n:
        raise BundleError("domain dimension does not match the system")
    boundary = _boundary_field(bundle, grid, coeffs.m, "solve-box")
    body = build_body(bundle["body"]) if "body" in bundle else None
    config = SolverConfig(method=args.method)
    if coeffs.has_quasilinear:
        from .fdsolve import PicardConfig
        field, report = solve_quasilinear(coeffs, grid, boundary,
                                          PicardConfig(solver=config))
    else:
        field, report = solve_dirichlet(coeffs, grid, boundary, config)
    artifacts = [str(_solution_csv(out, grid, field, args.seed).name)]
    if not args.no_figures and grid.n == 2:
        fig = out / "figures" / "solution.png"
        _figures.save_component_heatmaps(fig, grid.axes(), field.values,
                                         f"solved field (seed {args.seed})")
        artifacts.append(str(Path("figures") / fig.name))
    verdict = {
        "passed": True,
        "method": report.method,
        "iterations": report.iterations,
        "residual": report.residual,
        "picard_iterations": report.picard_iterations,
        "grid_shape": list(grid.shape),
        "artifacts": artifacts,
    }
    lines = [f"grid: {'x'.join(str(s) for s in grid.shape)} nodes",
             f"method: {report.method}, iterations: {report.iterations}, "
             f"residual: {report.residual:.3g}"]
    if report.picard_iterations is not None:
        lines.append(f"gradient-freezing iterations: {report.picard_iterations} "
                     f"(last update {report.picard_residual:.3g})")
    code = PASS
    if body is not None:
        audit = audit_invariance(field, body, audit_tol=args.tol)
        verdict["audit"] = {
            "passed": audit.passed,
            "max_margin": audit.max_margin,
            "boundary_max_margin": audit.boundary_max_margin,
            "dmp_margin": audit.dmp_margin,
            "audit_tol": audit.audit_tol,
            "worst_node": list(audit.worst_node) if audit.worst_node is not None else None,
        }
        verdict["passed"] = audit.passed
        lines.append(f"invariance audit: worst margin {audit.max_margin:.3g} "
                     f"against tolerance {audit.audit_tol:.3g} -> "
                     f"{'pass' if audit.passed else 'FAIL'}")
        code = PASS if audit.passed else CHECKED_FAIL
    return verdict, lines, code


def _cmd_solve_halfspace(args, bundle, out):
    coeffs = build_system(_need(bundle, "system", "solve-halfspace"))
    cell, shape, heights = _halfspace_setup(bundle, args, coeffs, "solve-halfspace")
    boundary = _tangential_boundary(bundle, cell, shape, coeffs.m, "solve-halfspace")
    body = build_body(bundle["body"]) if "body" in bundle else None
    problem = _hs.HalfSpaceProblem(coeffs, boundary, cell, heights)
    sol = _hs.solve_halfspace(problem)

    d = coeffs.n - 1
    axes = [np.arange(s) * (c / s) for s, c in zip(shape, cell)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack(mesh, axis=-1).reshape(-1, d)
    header = ["height"] + [f"y{i + 1}" for i in range(d)] + \
             [f"u{p + 1}" for p in range(coeffs.m)]
    rows = []
    for hi, h in enumerate(heights):
        flat = sol.values[hi].reshape(-1, coeffs.m)
        rows += [(h,) + tuple(coords[i]) + tuple(flat[i])
                 for i in range(coords.shape[0])]
    artifacts = [str(_write_csv(out / "solution.csv", header, rows, args.seed).name)]
    if not args.no_figures and d == 1:
        fig = out / "figures" / "profiles.png"
        labels = [f"u{p + 1} at height {h:g}" for h in heights for p in range(coeffs.m)]
        curves = np.stack([sol.values[hi][:, p] for hi in range(len(heights))
                           for p in range(coeffs.m)], axis=1)
        _figures.save_line_profiles(fig, axes[0], curves,
                                    f"half-space solution (seed {args.seed})", labels)
        artifacts.append(str(Path("figures") / fig.name))
    verdict = {
        "passed": True,
        "delta_estimate": sol.delta,
        "max_imag": sol.max_imag,
        "heights": heights,
        "grid_shape": list(shape),
        "artifacts": artifacts,
    }
    lines = [f"tangential grid: {'x'.join(str(s) for s in shape)}, "
             f"heights: {', '.join(f'{h:g}' for h in heights)}",
             f"delta estimate: {sol.delta:.6g}",
             f"largest imaginary residue: {sol.max_imag:.3g}"]
    code = PASS
    if body is not None:
        tol = args.tol if args.tol is not None else 1e-6
        margins = body.violation_margins(sol.values.reshape(-1, coeffs.m))
        worst = float(margins.max())
        verdict["audit"] = {"passed": worst <= tol, "max_margin": worst,
                            "audit_tol": tol}
        verdict["passed"] = worst <= tol
        lines.append(f"invariance audit: worst margin {worst:.3g} against "
                     f"tolerance {tol:g} -> {'pass' if worst <= tol else 'FAIL'}")
        if not args.no_figures:
            fig = out / "figures" / "margins.png"
            _figures.save_margin_histogram(fig, margins, tol,
                                           f"solution margins (seed {args.seed})")
            artifacts.append(str(Path("figures") / fig.name))
        code = PASS if worst <= tol else CHECKED_FAIL
    return verdict, lines, code


def _cmd_audit(args, bundle, out):
    coeffs = build_system(_need(bundle, "system", "audit"))
    body = build_body(_need(bundle, "body", "audit"))
    rng = np.random.default_rng(args.seed)
    threshold = args.tol if args.tol is not None else 1e-6
    artifacts = []
    if "halfspace" in bundle:
        cell, shape, heights = _halfspace_setup(bundle, args, coeffs, "audit")
        budget = args.budget or 20
        prepared = _hs.PreparedHalfSpace(coeffs, cell, shape)
        data = [_hs.random_periodic_field(prepared, body, rng)
                for _ in range(budget)]
        audit = _hs.audit_halfspace_invariance(coeffs, body, data, cell, heights,
                                               audit_tol=threshold)
        verdict = {
            "passed": audit.passed,
            "mode": "halfspace",
            "instances": budget,
            "max_margin": audit.max_margin,
            "worst": list(audit.worst) if audit.worst else None,
            "max_imag": audit.max_imag,
            "audit_tol": audit.audit_tol,
        }
        lines = [f"half-space audit over {budget} random boundary fields",
                 f"worst margin: {audit.max_margin:.6g} against tolerance "
                 f"{audit.audit_tol:g} -> {'pass' if audit.passed else 'FAIL'}"]
        if not audit.passed and audit.worst is not None:
            d = coeffs.n - 1
            axes = [np.arange(s) * (c / s) for s, c in zip(shape, cell)]
            coords = np.stack(np.meshgrid(*axes, indexing="ij"),
                              axis=-1).reshape(-1, d)
            field = np.asarray(data[audit.worst[0]], dtype=float)
            header = [f"y{i + 1}" for i in range(d)] + \
                     [f"u{p + 1}" for p in range(coeffs.m)]
            rows = [tuple(coords[i]) + tuple(field[i])
                    for i in range(coords.shape[0])]
            artifacts.append(str(_write_csv(out / "violating_boundary.csv",
                                            header, rows, args.seed).name))
        code = PASS if audit.passed else CHECKED_FAIL
    else:
        grid = _build_grid(bundle, args, "audit")
        if grid.n != coeffs.n:
            raise BundleError("domain dimension does not match the system")
        budget = args.budget or 200
        result = search_boundary_violation(coeffs, grid, body, rng, budget,
                                           threshold)
        found = bool(result["found"])
        verdict = {
            "passed": not found,
            "mode": "box",
            "solves": result["solves"],
            "max_margin": result["margin"],
            "threshold": threshold,
        }
        lines = [f"box-domain search over {result['solves']} solves",
                 f"worst margin: {result['margin']:.6g} against threshold "
                 f"{threshold:g} -> {'no violation' if not found else 'VIOLATION'}"]
        if found and result["boundary"] is not None:
            artifacts.append(str(_solution_csv(out, grid, result["boundary"],
                                               args.seed,
                                               "violating_boundary.csv").name))
        code = CHECKED_FAIL if found else PASS
    verdict["artifacts"] = artifacts
    verdict["seed_used"] = args.seed
    return verdict, lines, code


def _cmd_normalization_check(args, bundle, out):
    tol = args.tol if args.tol is not None else 1e-10
    if "kernel" in bundle:
        kernel = build_kernel(bundle["kernel"])
        defects = {str(pt.label): pt.normalization_defect() for pt in kernel.points}
        defect = max(defects.values())
        rows = sorted(defects.items())
        artifacts = [str(_write_csv(out / "defects.csv", ["x", "defect"],
                                    rows, args.seed).name)]
        mode = "kernel"
    elif "system" in bundle:
        coeffs = build_system(bundle["system"])
        defect = _hs.kernel_normalization_check(coeffs, args.grid or 64)
        artifacts = []
        mode = "halfspace"
    else:
        raise BundleError("normalization-check needs a 'kernel' or 'system' section")
    verdict = {
        "passed": defect <= tol,
        "mode": mode,
        "max_defect": defect,
        "tolerance": tol,
        "artifacts": artifacts,
    }
    lines = [f"normalization defect ({mode}): {defect:.3g} against "
             f"tolerance {tol:g}"]
    return verdict, lines, PASS if defect <= tol else CHECKED_FAIL


_HANDLERS = {
    "check-conditions": _cmd_check_conditions,
    "classify": _cmd_classify,
    "detect-factorization": _cmd_detect_factorization,
    "check-transform": _cmd_check_transform,
    "witness": _cmd_witness,
    "solve-box": _cmd_solve_box,
    "solve-halfspace": _cmd_solve_halfspace,
    "audit": _cmd_audit,
    "normalization-check": _cmd_normalization_check,
}


def _positive_int(text):
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(
            f"must be a positive integer, got {value}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ellinv",
        description="Invariance checks and solvers for strongly elliptic systems.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "check-conditions": "left-eigenvector and ellipticity conditions for a body",
        "classify": "classify coefficient matrices against a body's admissible family",
        "detect-factorization": "detect mixing-matrix times scalar-operator structure",
        "check-transform": "kernel invariance conditions for a discrete transform",
        "witness": "construct a body-exiting input for a failing kernel",
        "solve-box": "finite difference Dirichlet solve on a box",
        "solve-halfspace": "Fourier mode solve on a half-space",
        "audit": "randomized invariance audit of a solver against a body",
        "normalization-check": "normalization defect of a kernel or half-space solver",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--input", required=True, help="JSON problem bundle")
        sp.add_argument("--out", default="ellinv-out", help="output directory")
        sp.add_argument("--tol", type=float, default=None,
                        help="tolerance override (meaning depends on subcommand)")
        sp.add_argument("--seed", type=int, default=0,
                        help="seed for randomized steps; recorded in artifacts")
        sp.add_argument("--budget", type=_positive_int, default=None,
                        help="sample/search budget override")
        sp.add_argument("--grid", type=_positive_int, default=None,
                        help="grid nodes per axis override")
        sp.add_argument("--heights", default=None,
                        help="comma-separated evaluation heights")
        sp.add_argument("--no-figures", action="store_true",
                        help="skip PNG rendering")
        sp.add_argument("--method", default="gmres",
                        choices=["gmres", "bicgstab", "direct"],
                        help="linear solver for box problems")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for stale in list(out.glob("*.csv")) + list(out.glob("figures/*.png")) + \
            [out / "verdict.json", out / "report.txt"]:
        if stale.is_file():
            stale.unlink()
    if not args.no_figures:
        (out / "figures").mkdir(exist_ok=True)
    logger = logging.getLogger("ellinv.cli")
    logger.setLevel(logging.INFO)
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logger.addHandler(handler)
    try:
        logger.info("start subcommand=%s input=%s seed=%d",
                    args.subcommand, args.input, args.seed)
        bundle = _load_bundle(args.input)
        verdict, lines, code = _HANDLERS[args.subcommand](args, bundle, out)
        verdict.setdefault("subcommand", args.subcommand)
        verdict.setdefault("seed", args.seed)
        _write_verdict(out, verdict)
        status = "PASS" if code == PASS else "FAIL"
        report = [f"subcommand: {args.subcommand}",
                  f"input: {args.input}",
                  f"seed: {args.seed}",
                  ""] + lines + ["", f"result: {status} (exit {code})"]
        _write_report(out, report)
        print(f"{args.subcommand}: {status} (details in {out})")
        logger.info("finish exit=%d", code)
        return code
    except BundleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        logger.error("input error: %s", exc)
        return ERROR
    except (SolveError, _hs.DefectiveModeError, _bodies.DegenerateBodyError,
            _transform.NormalizationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        logger.error("run error: %s", exc)
        return ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        logger.error("run error: %s", exc)
        return ERROR
    finally:
        logger.removeHandler(handler)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
