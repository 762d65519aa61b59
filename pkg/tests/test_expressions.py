import numpy as np
import pytest

from ellinv.expressions import (Expression, ExpressionError,
                                compile_expression, evaluate, vector_field)


def test_polynomial_and_trig():
    expr = compile_expression("x1**2 - 2*x2 + sin(x1)", ["x1", "x2"])
    assert expr({"x1": 0.0, "x2": 1.0}) == pytest.approx(-2.0)
    x1 = np.linspace(0, 1, 7)
    got = expr({"x1": x1, "x2": 0.0})
    assert np.allclose(got, x1 ** 2 + np.sin(x1))


def test_min_normsq_example():
    expr = compile_expression("min(normsq(eta), 10)", ["eta"])
    assert expr({"eta": np.zeros(4)}) == pytest.approx(0.0)
    assert expr({"eta": np.array([1.0, 2.0])}) == pytest.approx(5.0)
    assert expr({"eta": np.full(3, 10.0)}) == pytest.approx(10.0)


def test_norm_and_abs_and_constants():
    assert evaluate("norm(3, 4)", {}) == pytest.approx(5.0)
    assert evaluate("abs(-2.5)", {}) == pytest.approx(2.5)
    assert evaluate("cos(pi)", {}) == pytest.approx(-1.0)
    assert evaluate("exp(1) - e", {}) == pytest.approx(0.0)
    assert evaluate("max(1, 2, 3)", {}) == pytest.approx(3.0)


def test_division_and_power_and_unary():
    assert evaluate("-(2**3) / 4", {}) == pytest.approx(-2.0)
    assert evaluate("+5 - 2", {}) == pytest.approx(3.0)


def test_broadcasting_over_arrays():
    expr = compile_expression("x*y + 1", ["x", "y"])
    x = np.arange(3.0)[:, None]
    y = np.arange(4.0)[None, :]
    assert expr({"x": x, "y": y}).shape == (3, 4)


def test_unknown_name_reports_column():
    with pytest.raises(ExpressionError, match="column"):
        compile_expression("x1 + bogus", ["x1"])


def test_disallowed_constructs_rejected():
    for text in ("__import__('os')", "x1.size", "[1,2]", "x1 if 1 else 2",
                 "lambda: 1", "f'{1}'", "'abc'", "x1 @ x1", "x1 % 2"):
        with pytest.raises(ExpressionError):
            compile_expression(text, ["x1"])


def test_unknown_function_and_arity_errors():
    with pytest.raises(ExpressionError):
        compile_expression("sinh(x1)", ["x1"])
    with pytest.raises(ExpressionError):
        compile_expression("sin(x1, x1)", ["x1"])
    with pytest.raises(ExpressionError):
        compile_expression("min(x1)", ["x1"])


def test_syntax_error_reports_position():
    with pytest.raises(ExpressionError):
        compile_expression("1 +", ["x1"])


def test_runtime_domain_errors_are_wrapped():
    expr = compile_expression("1 / x1", ["x1"])
    with pytest.raises(ExpressionError):
        expr({"x1": 0.0})
    logexpr = compile_expression("log(x1)", ["x1"])
    with pytest.raises(ExpressionError):
        logexpr({"x1": -1.0})


def test_vector_field_stacks_components():
    field = vector_field(["x1", "x1 + x2", "0"], ["x1", "x2"])
    out = field({"x1": np.ones(5), "x2": 2.0 * np.ones(5)})
    assert out.shape == (5, 3)
    assert np.allclose(out[:, 0], 1.0)
    assert np.allclose(out[:, 1], 3.0)
    assert np.allclose(out[:, 2], 0.0)


def test_expression_object_reports_text():
    expr = Expression("x1 + 1", ["x1"])
    assert "x1 + 1" in repr(expr) or expr.text == "x1 + 1"
