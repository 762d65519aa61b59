"""Small arithmetic expression language for data supplied on the command line.

Expressions are parsed with :mod:`ast` and evaluated against numpy, so a
compiled expression accepts scalars or arrays for its variables and
broadcasts elementwise.  Only arithmetic, a fixed function whitelist, and
declared variable names are allowed; anything else is rejected with the
offending column.
"""

from __future__ import annotations

import ast

import numpy as np


class ExpressionError(ValueError):
    pass


def _reduce_min(*args):
    out = args[0]
    for a in args[1:]:
        out = np.minimum(out, a)
    return out


def _reduce_max(*args):
    out = args[0]
    for a in args[1:]:
        out = np.maximum(out, a)
    return out


def _normsq(*args):
    # one argument: treated as a vector, reduced over its last axis;
    # several arguments: combined elementwise
    if len(args) == 1:
        arr = np.asarray(args[0], dtype=float)
        return np.sum(arr ** 2, axis=-1) if arr.ndim else arr ** 2
    out = np.asarray(args[0], dtype=float) ** 2
    for a in args[1:]:
        out = out + np.asarray(a, dtype=float) ** 2
    return out


_FUNCTIONS = {
    "sin": (np.sin, 1, 1),
    "cos": (np.cos, 1, 1),
    "tan": (np.tan, 1, 1),
    "exp": (np.exp, 1, 1),
    "log": (np.log, 1, 1),
    "sqrt": (np.sqrt, 1, 1),
    "abs": (np.abs, 1, 1),
    "min": (_reduce_min, 2, None),
    "max": (_reduce_max, 2, None),
    "norm": (lambda *a: np.sqrt(_normsq(*a)), 1, None),
    "normsq": (_normsq, 1, None),
}

_CONSTANTS = {"pi": np.pi, "e": np.e}

_BINOPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a ** b,
}


def _fail(node, message):
    col = getattr(node, "col_offset", 0)
    raise ExpressionError(f"column {col}: {message}")


class Expression:
    """A validated expression; call with a dict of variable values."""

    def __init__(self, text, names):
        self.text = text
        self.names = frozenset(names)
        try:
            self._tree = ast.parse(text, mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(
                f"column {exc.offset or 0}: cannot parse expression: {exc.msg}") from None
        self._validate(self._tree.body)

    def _validate(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                _fail(node, f"only numeric constants are allowed, not {node.value!r}")
        elif isinstance(node, ast.Name):
            if node.id not in self.names and node.id not in _CONSTANTS:
                allowed = ", ".join(sorted(self.names) + sorted(_CONSTANTS))
                _fail(node, f"unknown name '{node.id}' (allowed: {allowed})")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                _fail(node, f"operator {type(node.op).__name__} is not allowed")
            self._validate(node.left)
            self._validate(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.UAdd, ast.USub)):
                _fail(node, f"operator {type(node.op).__name__} is not allowed")
            self._validate(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
                name = getattr(node.func, "id", type(node.func).__name__)
                _fail(node, f"unknown function '{name}' "
                            f"(allowed: {', '.join(sorted(_FUNCTIONS))})")
            if node.keywords:
                _fail(node, "keyword arguments are not allowed")
            _, lo, hi = _FUNCTIONS[node.func.id]
            if len(node.args) < lo or (hi is not None and len(node.args) > hi):
                want = f"{lo}" if hi == lo else f"at least {lo}"
                _fail(node, f"{node.func.id}() takes {want} argument(s), "
                            f"got {len(node.args)}")
            for arg in node.args:
                self._validate(arg)
        else:
            _fail(node, f"syntax element {type(node).__name__} is not allowed")

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return np.float64(node.value)
        if isinstance(node, ast.Name):
            if node.id in env:
                # numpy scalars route division/domain errors through errstate
                return np.asarray(env[node.id], dtype=float)[()]
            return _CONSTANTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env),
                                          self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, env)
            return -val if isinstance(node.op, ast.USub) else +val
        func, _, _ = _FUNCTIONS[node.func.id]
        return func(*(self._eval(a, env) for a in node.args))

    def __call__(self, env):
        missing = self.names & self._used_names() - set(env)
        if missing:
            raise ExpressionError(f"missing values for: {', '.join(sorted(missing))}")
        with np.errstate(divide="raise", invalid="raise"):
            try:
                return self._eval(self._tree.body, env)
            except FloatingPointError as exc:
                raise ExpressionError(f"evaluation failed on '{self.text}': {exc}") from None

    def _used_names(self):
        return {n.id for n in ast.walk(self._tree) if isinstance(n, ast.Name)}


def compile_expression(text, names):
    return Expression(text, names)


def evaluate(text, env):
    """One-shot parse and evaluate; names are taken from the environment."""
    return Expression(text, env.keys())(env)


def vector_field(texts, names):
    """Compile one expression per component; call -> array stacked last axis."""
    exprs = [Expression(t, names) for t in texts]

    def call(env):
        parts = [np.asarray(e(env), dtype=float) for e in exprs]
        shape = np.broadcast_shapes(*(p.shape for p in parts))
        return np.stack([np.broadcast_to(p, shape) for p in parts], axis=-1)

    return call
