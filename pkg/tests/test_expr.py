import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from bakry_lab.expr import (
    ExprEvalError, ExprSyntaxError, differentiate, evaluate, free_symbols, parse_expr, to_text,
)


def test_constant_zero():
    e = parse_expr("0")
    assert evaluate(e, {}) == 0.0
    assert free_symbols(e) == frozenset()


def test_sine_special_value():
    assert evaluate("sin(2*3.141592653589793*x)", {"x": 0.25}) == pytest.approx(1.0, abs=1e-15)


def test_log_potential_at_origin():
    assert evaluate("-log(1+x^2+y^2)", {"x": 0.0, "y": 0.0}) == 0.0


def test_pi_constant():
    assert evaluate("pi", {}) == math.pi


@pytest.mark.parametrize("text, value", [
    ("2^3^2", 2.0 ** 9),      # right associative
    ("-2^2", -4.0),           # ^ binds tighter than unary minus
    ("2*-3", -6.0),
    ("1-2-3", -4.0),
    ("8/4/2", 1.0),
    ("2^-1", 0.5),
])
def test_precedence(text, value):
    assert evaluate(text, {}) == value


@pytest.mark.parametrize("text, offset", [
    ("1 +", 3),
    ("(1+2", 4),
    ("sin 1", 0),
    ("1 $ 2", 2),
])
def test_syntax_error_offsets(text, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr(text)
    assert info.value.offset == offset


def test_unknown_identifier_and_arity():
    with pytest.raises(ExprSyntaxError):
        parse_expr("foo + 1")
    with pytest.raises(ExprSyntaxError):
        parse_expr("sin(x, y)")


def test_domain_errors_carry_location():
    with pytest.raises(ExprEvalError) as info:
        evaluate("1 + log(x)", {"x": np.array([1.0, -1.0])})
    assert info.value.offset == 4
    with pytest.raises(ExprEvalError):
        evaluate("sqrt(x-2)", {"x": 1.0})


def test_oversized_input():
    with pytest.raises(ExprSyntaxError):
        parse_expr("1+" * 40000 + "1")


CORPUS = [
    "0", "x", "-x^2", "sin(2*pi*x)*cos(2*pi*y)", "log(1+x^2+y^2)", "exp(-u)/u",
    "sqrt(1+theta^2)-tanh(phi)", "atan(x/2)+abs(y)", "sinh(x)*cosh(y)^2", "tan(0.1*t)",
    "(1-x^2-y^2)/((x-1)^2+y^2)", "2^x^0.5",
]


@pytest.mark.parametrize("text", CORPUS)
def test_corpus_round_trip(text):
    e = parse_expr(text)
    assert parse_expr(to_text(e)) == e


def _sympy(text):
    ns = {n: sp.Symbol(n) for n in ("x", "y", "u", "theta", "phi", "t")}
    ns.update(pi=sp.pi, atan=sp.atan, log=sp.log, abs=sp.Abs)
    return sp.sympify(text.replace("^", "**"), locals=ns)


@pytest.mark.parametrize("text", [c for c in CORPUS if "abs" not in c])
def test_derivative_matches_sympy(text):
    sym = _sympy(text)
    pt = {"x": 0.37, "y": 0.21, "u": 1.3, "theta": 0.8, "phi": 0.4, "t": 0.5}
    e = parse_expr(text)
    for var in ("x", "y", "u"):
        expected = float(sp.diff(sym, sp.Symbol(var)).subs({sp.Symbol(k): v for k, v in pt.items()}))
        assert evaluate(differentiate(e, var), pt) == pytest.approx(expected, rel=1e-12, abs=1e-12)


# random expression trees for the round-trip property
_leaf = st.one_of(
    st.sampled_from(["x", "y", "t", "u", "pi"]),
    st.floats(min_value=0, max_value=1e6, allow_nan=False).map(repr),
    st.integers(min_value=0, max_value=99).map(str),
)


def _extend(children):
    binop = st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(
        lambda a: f"({a[0]}){a[1]}({a[2]})")
    neg = children.map(lambda a: f"-({a})")
    call = st.tuples(st.sampled_from(["sin", "cos", "exp", "log", "sqrt", "atan", "abs"]),
                     children).map(lambda a: f"{a[0]}({a[1]})")
    bare = st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(
        lambda a: f"{a[0]} {a[1]} {a[2]}")
    return st.one_of(binop, neg, call, bare)


expressions = st.recursive(_leaf, _extend, max_leaves=12)


@given(expressions)
def test_print_parse_round_trip(text):
    e = parse_expr(text)
    printed = to_text(e)
    assert parse_expr(printed) == e
    assert to_text(parse_expr(printed)) == printed


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_evaluation_deterministic(x, y):
    e = parse_expr("sin(x)*exp(y)-x^2")
    a = evaluate(e, {"x": x, "y": y})
    assert a == evaluate(e, {"x": x, "y": y})
    assert a == pytest.approx(math.sin(x) * math.exp(y) - x * x, rel=1e-12, abs=1e-12)
