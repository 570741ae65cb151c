import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gla import expr as ex
from gla.expr import DomainError, ParseError, SymbolTable, UndeclaredVariableError

X = SymbolTable.make(3)
NAMES = X.names


def _random_expr(rng, depth=3):
    """Random smooth expression over x[1..3]; arguments of log/sqrt kept positive."""
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.6:
            return ex.var(NAMES[rng.integers(3)])
        return ex.const(float(np.round(rng.uniform(-2, 2), 3)))
    kind = rng.integers(7)
    a = _random_expr(rng, depth - 1)
    if kind == 0:
        return a + _random_expr(rng, depth - 1)
    if kind == 1:
        return a - _random_expr(rng, depth - 1)
    if kind == 2:
        return a * _random_expr(rng, depth - 1)
    if kind == 3:
        return a / (ex.const(2.0) + ex.sin(_random_expr(rng, depth - 1)))
    if kind == 4:
        return ex.func(("sin", "cos")[rng.integers(2)], a)
    if kind == 5:
        return ex.exp(ex.mul(ex.const(0.3), a))
    return ex.log(ex.const(1.5) + a * a) + ex.sqrt(ex.const(1.0) + a * a) + a ** 3


def _fd(e, pt, v, h=1e-5):
    up, dn = dict(pt), dict(pt)
    up[v] += h
    dn[v] -= h
    return (ex.evaluate(e, up) - ex.evaluate(e, dn)) / (2 * h)


# -- parsing -----------------------------------------------------------------

@pytest.mark.parametrize("text,value", [
    ("2^3^2", 512.0),
    ("-2^2", -4.0),
    ("1-2-3", -4.0),
    ("8/2/2", 2.0),
    ("2*3+4", 10.0),
    ("2*(3+4)", 14.0),
    ("sin(pi/2)", 1.0),
    ("1.5e1", 15.0),
])
def test_parse_precedence(text, value):
    assert ex.evaluate(ex.parse(text), {}) == pytest.approx(value)


def test_parse_variables_and_errors():
    e = ex.parse("x[1]*y[2]", SymbolTable.make(2, 2))
    assert ex.free_vars(e) == {"x[1]", "y[2]"}
    with pytest.raises(UndeclaredVariableError):
        ex.parse("x[4]", X)
    with pytest.raises(ParseError):
        ex.parse("x[1] +")
    with pytest.raises(ParseError):
        ex.parse("x + 1")
    with pytest.raises(ParseError):
        ex.parse("(x[1]")


def test_symbol_table_contiguity():
    with pytest.raises(ValueError):
        SymbolTable(("x[1]", "x[3]"))
    with pytest.raises(ValueError):
        SymbolTable(("x[1]",), ("x[1]",))


def test_hash_consing_shares_nodes():
    a = ex.parse("sin(x[1])*x[2]")
    b = ex.parse("sin(x[1])*x[2]")
    assert a is b


# -- differentiation -----------------------------------------------------------

def test_derivative_matches_finite_differences_200_pairs():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(200):
        e = _random_expr(rng)
        v = NAMES[rng.integers(3)]
        pt = {n: float(rng.uniform(-1, 1)) for n in NAMES}
        exact = ex.evaluate(ex.differentiate(e, v), pt)
        approx = _fd(e, pt, v)
        worst = max(worst, abs(exact - approx) / (1 + abs(exact)))
    assert worst < 1e-6


def test_mixed_partials_commute():
    rng = np.random.default_rng(5)
    env = {n: rng.uniform(-1, 1, 50) for n in NAMES}
    for _ in range(50):
        e = _random_expr(rng)
        d12 = ex.differentiate(ex.differentiate(e, "x[1]"), "x[2]")
        d21 = ex.differentiate(ex.differentiate(e, "x[2]"), "x[1]")
        ev = ex.Evaluator(env)
        assert np.max(np.abs(ev.eval(d12) - ev.eval(d21))) < 1e-10


def test_closed_form_derivatives():
    x = ex.var("x[1]")
    pt = {"x[1]": 0.7}
    assert ex.evaluate(ex.differentiate(ex.sin(x) ** 2, "x[1]"), pt) == pytest.approx(math.sin(1.4))
    assert ex.evaluate(ex.differentiate(ex.log(x), "x[1]"), pt) == pytest.approx(1 / 0.7)
    assert ex.evaluate(ex.differentiate(x ** x, "x[1]"), pt) == pytest.approx(0.7 ** 0.7 * (math.log(0.7) + 1))
    assert ex.is_zero(ex.differentiate(ex.var("x[2]") ** 2, "x[1]"))


def test_render_round_trip():
    rng = np.random.default_rng(3)
    env = {n: rng.uniform(-1, 1, 20) for n in NAMES}
    for _ in range(100):
        e = _random_expr(rng)
        back = ex.parse(ex.render(e), X)
        assert np.allclose(ex.Evaluator(env).eval(e), ex.Evaluator(env).eval(back), rtol=1e-14, atol=1e-14)


def test_substitute_composes():
    e = ex.parse("x[1]^2 + x[2]")
    s = ex.substitute(e, {"x[1]": ex.parse("sin(x[3])"), "x[2]": ex.const(1.0)})
    assert ex.evaluate(s, {"x[3]": 0.4}) == pytest.approx(math.sin(0.4) ** 2 + 1)


# -- numerics --------------------------------------------------------------------

def test_domain_error_reports_point():
    e = ex.log(ex.var("x[1]"))
    with pytest.raises(DomainError) as info:
        ex.evaluate(e, {"x[1]": np.array([1.0, -1.0])})
    assert info.value.point == {"x[1]": -1.0}


def test_inverse_matrix_against_numpy():
    m = [[ex.parse("2 + x[1]^2"), ex.parse("x[2]")], [ex.parse("x[2]"), ex.parse("3")]]
    inv = ex.inverse_matrix(m)
    pt = {"x[1]": 0.3, "x[2]": -0.8}
    num = np.array([[ex.evaluate(c, pt) for c in row] for row in m])
    got = np.array([[ex.evaluate(c, pt) for c in row] for row in inv])
    assert np.allclose(got, np.linalg.inv(num), atol=1e-14)
    # derivative of an inverse entry against finite differences
    d = ex.evaluate(ex.differentiate(inv[0][1], "x[1]"), pt)
    assert d == pytest.approx(_fd(inv[0][1], pt, "x[1]"), abs=1e-8)


def test_implicit_root_and_its_derivative():
    u, p = ex.var("u[1]"), ex.var("p[1]")
    sysm = ex.ImplicitSystem([u ** 3 + u - p], ["u[1]"], [p])
    root = sysm.root(0)
    assert ex.evaluate(root, {"p[1]": 2.0}) == pytest.approx(1.0, abs=1e-12)
    d = ex.differentiate(root, "p[1]")
    assert ex.evaluate(d, {"p[1]": 2.0}) == pytest.approx(0.25, abs=1e-12)
    assert ex.evaluate(d, {"p[1]": 0.7}) == pytest.approx(_fd(root, {"p[1]": 0.7}, "p[1]"), abs=1e-8)


def test_compiled_matches_evaluator():
    rng = np.random.default_rng(8)
    exprs = [_random_expr(rng) for _ in range(20)]
    f = ex.compile_exprs(exprs, NAMES)
    for _ in range(10):
        vals = rng.uniform(-1, 1, 3)
        direct = [ex.evaluate(e, dict(zip(NAMES, vals))) for e in exprs]
        assert np.allclose(f(vals), direct, rtol=1e-13, atol=1e-13)


# -- property tests ----------------------------------------------------------------

coef = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(a=coef, b=coef, c=coef, x=st.floats(-2, 2))
def test_polynomial_derivative_property(a, b, c, x):
    e = ex.parse(f"({a!r})*x[1]^2 + ({b!r})*x[1] + ({c!r})")
    assert ex.evaluate(ex.differentiate(e, "x[1]"), {"x[1]": x}) == pytest.approx(2 * a * x + b, abs=1e-9)


leaves = st.one_of(st.sampled_from([ex.var(n) for n in NAMES]), coef.map(ex.const))
trees = st.recursive(
    leaves,
    lambda kids: st.one_of(
        st.tuples(kids, kids).map(lambda t: t[0] + t[1]),
        st.tuples(kids, kids).map(lambda t: t[0] * t[1]),
        kids.map(ex.sin),
        kids.map(lambda k: ex.exp(ex.const(0.2) * k)),
    ),
    max_leaves=8,
)


@settings(max_examples=80, deadline=None)
@given(e=trees, pt=st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_product_rule_property(e, pt):
    env = dict(zip(NAMES, pt))
    f = ex.sin(ex.var("x[2]"))
    lhs = ex.evaluate(ex.differentiate(e * f, "x[2]"), env)
    rhs = ex.evaluate(ex.differentiate(e, "x[2]") * f + e * ex.differentiate(f, "x[2]"), env)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)
