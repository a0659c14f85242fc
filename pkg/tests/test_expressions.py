import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stopgame import Expr, ExpressionError


def test_constant_broadcasts_to_state_shape():
    out = Expr("2.5")(0.0, x=np.zeros((4, 1)))
    assert out.shape == (4,)
    assert np.all(out == 2.5)


def test_caret_and_double_star_are_the_same_power():
    x = np.linspace(-2, 2, 9)[:, None]
    assert np.array_equal(Expr("x^2")(0.0, x=x), Expr("x**2")(0.0, x=x))


def test_coordinates_controls_and_time():
    e = Expr("t + 2*x2 - a1 + pi")
    x = np.array([[1.0, 3.0]])
    a = np.array([[0.5]])
    assert e(0.25, x=x, a=a)[0] == pytest.approx(0.25 + 6.0 - 0.5 + math.pi)
    assert e.uses_time and e.uses_control
    assert e.max_state_index() == 2 and e.max_control_index() == 1


def test_functions():
    x = np.array([[-1.0], [0.5], [2.0]])
    out = Expr("max(min(1, x^2), abs(x)/10) + exp(0)*cos(0)*pow(2, 1) + sin(0)")(0.0, x=x)
    assert np.allclose(out, np.minimum(1, x[:, 0] ** 2) + 2.0)


@pytest.mark.parametrize("source", ["__import__('os')", "x.real", "y + 1", "lambda: 1",
                                    "min(1)", "exp(x, 2)", "[1, 2]", "x if x else 1", "'a'",
                                    "x < 1", "True"])
def test_rejects_anything_outside_the_grammar(source):
    with pytest.raises(ExpressionError):
        Expr(source)


def test_syntax_error_is_reported():
    with pytest.raises(ExpressionError, match="cannot parse"):
        Expr("1 +")


def test_numbers_are_accepted_as_sources():
    assert Expr(3)(0.0)[()] == 3.0
    with pytest.raises(ExpressionError):
        Expr(None)


def test_missing_variable_is_an_expression_error():
    with pytest.raises(ExpressionError):
        Expr("x2")(0.0, x=np.zeros((1, 1)))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=4),
       st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
def test_polynomial_matches_numpy(xs, c0, c1, c2):
    x = np.asarray(xs)[:, None]
    e = Expr(f"{c0!r} + {c1!r}*x + {c2!r}*x^2")
    assert np.allclose(e(0.0, x=x), c0 + c1 * x[:, 0] + c2 * x[:, 0] ** 2)


def test_equality_and_hash_follow_source():
    assert Expr("x") == Expr("x") and hash(Expr("x")) == hash(Expr("x"))
    assert Expr("x") != Expr("x + 0")
