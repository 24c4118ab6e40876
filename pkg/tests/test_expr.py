"""Expression kernel: parsing, differentiation, evaluation, substitution."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isotrig import expr as ex
from isotrig.errors import DomainError, MissingVariableError, ParseError


XVARS = ("x1", "x2")


def test_parse_product_sum():
    e = ex.parse("x1*x2 + x2", XVARS)
    assert ex.evaluate(e, {"x1": 2.0, "x2": 3.0}) == 9.0


def test_parse_trigger_with_parameter():
    e = ex.parse(
        "e1^2 + e2^2 - 0.0127^2*sigma^2*(x1^2+x2^2)",
        ("x1", "x2", "e1", "e2"),
        params={"sigma": 0.1},
    )
    got = ex.evaluate(e, {"x1": 1.0, "x2": 0.0, "e1": 0.0, "e2": 0.0})
    assert got == pytest.approx(-((0.0127 * 0.1) ** 2), rel=1e-15)
    # parameters are folded away
    assert e.free_vars == frozenset(("x1", "x2", "e1", "e2"))


def test_parse_unbalanced_paren_reports_position():
    with pytest.raises(ParseError) as err:
        ex.parse("sin(x1", XVARS)
    assert err.value.position == 6


def test_parse_unknown_identifier():
    with pytest.raises(ParseError, match="unknown identifier"):
        ex.parse("x1 + q", XVARS)


def test_parse_division_by_constant_zero():
    with pytest.raises(ParseError, match="division by constant zero"):
        ex.parse("x1 / 0", XVARS)


def test_parse_precedence():
    # ^ binds tighter than unary minus, which binds tighter than *
    e = ex.parse("-x1^2", XVARS)
    assert ex.evaluate(e, {"x1": 3.0, "x2": 0.0}) == -9.0
    e = ex.parse("-x1*x2", XVARS)
    assert ex.evaluate(e, {"x1": 2.0, "x2": 5.0}) == -10.0
    e = ex.parse("2^3^2", ())
    assert ex.evaluate(e, {}) == 512.0  # right-associative


def test_interning_shares_nodes():
    a = ex.parse("x1*x2 + x2", XVARS)
    b = ex.parse("x1*x2 + x2", XVARS)
    assert a is b


def test_differentiate_linear_term():
    e = ex.parse("x1*x2 + x2", XVARS)
    d = ex.differentiate(e, "x1")
    assert d is ex.var("x2")


def test_differentiate_constant_is_zero():
    assert ex.differentiate(ex.const(3.5), "w") is ex.ZERO


def test_differentiate_quotient_power():
    # d/dx1 of sin(x1/w)*w^2, checked by central finite difference
    e = ex.parse("sin(x1/w)*w^2", ("x1", "w"))
    d = ex.differentiate(e, "x1")
    at = {"x1": 0.3, "w": 1.0}
    h = 1e-6
    fd = (
        ex.evaluate(e, {"x1": 0.3 + h, "w": 1.0})
        - ex.evaluate(e, {"x1": 0.3 - h, "w": 1.0})
    ) / (2 * h)
    assert ex.evaluate(d, at) == pytest.approx(fd, rel=1e-6)


def test_evaluate_simple():
    e = ex.parse("x1*x2", XVARS)
    assert ex.evaluate(e, {"x1": 2.0, "x2": 3.0}) == 6.0


def test_evaluate_missing_variable():
    e = ex.parse("x1*x2", XVARS)
    with pytest.raises(MissingVariableError):
        ex.evaluate(e, {"x1": 2.0})


def test_evaluate_pole_is_domain_error():
    e = ex.parse("w^(-1)*x1", ("x1", "w"))
    with pytest.raises(DomainError):
        ex.evaluate(e, {"x1": 1.0, "w": 0.0})


def test_substitute_rewrites_cube():
    e = ex.parse("x1^3", XVARS)
    sub = ex.substitute(e, {"x1": ex.div(ex.var("x1"), ex.var("w"))})
    assert ex.evaluate(sub, {"x1": 2.0, "w": 2.0}) == 1.0


def test_substitute_homogenization_matches_closed_form():
    # x_i -> x_i/w then * w^2 agrees with x1*x2 + x2*w wherever w != 0
    e = ex.parse("x1*x2 + x2", XVARS)
    sub = ex.substitute(
        e, {n: ex.div(ex.var(n), ex.var("w")) for n in XVARS}
    )
    hom = ex.mul(ex.powi(ex.var("w"), 2), sub)
    direct = ex.parse("x1*x2 + x2*w", ("x1", "x2", "w"))
    rng = np.random.default_rng(0)
    for _ in range(20):
        x1, x2 = rng.uniform(-2, 2, size=2)
        w = rng.uniform(0.2, 3.0)
        at = {"x1": x1, "x2": x2, "w": w}
        assert ex.evaluate(hom, at) == pytest.approx(ex.evaluate(direct, at), rel=1e-12)


def test_substitute_empty_bindings_is_identity():
    e = ex.parse("x1*x2 + x2", XVARS)
    assert ex.substitute(e, {}) is e


# ---------------------------------------------------------------------------
# Random-expression properties
# ---------------------------------------------------------------------------

_VARS = ("x1", "x2", "w")


def _exprs(depth):
    leaf = st.one_of(
        st.sampled_from([ex.var(n) for n in _VARS]),
        st.floats(-3, 3, allow_nan=False).map(lambda v: ex.const(round(v, 3))),
    )
    if depth == 0:
        return leaf

    def widen(children):
        return st.one_of(
            st.tuples(children, children).map(lambda ab: ex.add(*ab)),
            st.tuples(children, children).map(lambda ab: ex.mul(*ab)),
            children.map(ex.neg),
            children.map(ex.sin),
            children.map(ex.cos),
            st.tuples(children, st.integers(0, 3)).map(lambda an: ex.powi(*an)),
            # denominator shifted away from zero so evaluation stays in-domain
            st.tuples(children, children).map(
                lambda ab: ex.div(ab[0], ex.add(ex.sin(ab[1]), ex.const(2.0)))
            ),
        )
    return st.one_of(leaf, widen(_exprs(depth - 1)))


def _assignments(rng_seed, count=100):
    rng = np.random.default_rng(rng_seed)
    pts = rng.uniform(-2.0, 2.0, size=(count, len(_VARS)))
    return [dict(zip(_VARS, map(float, p))) for p in pts]


@settings(max_examples=60, deadline=None)
@given(e=_exprs(3), seed=st.integers(0, 2**16))
def test_derivative_matches_finite_difference(e, seed):
    d = ex.differentiate(e, "x1")
    h = 1e-6
    rng = np.random.default_rng(seed)
    for _ in range(4):
        at = dict(zip(_VARS, map(float, rng.uniform(-1.5, 1.5, size=3))))
        lo = dict(at, x1=at["x1"] - h)
        hi = dict(at, x1=at["x1"] + h)
        fd = (ex.evaluate(e, hi) - ex.evaluate(e, lo)) / (2 * h)
        dv = ex.evaluate(d, at)
        scale = max(1.0, abs(dv), abs(fd))
        assert abs(dv - fd) <= 1e-5 * scale


@settings(max_examples=80, deadline=None)
@given(e=_exprs(3))
def test_print_parse_round_trip_bit_equal(e):
    text = ex.to_string(e)
    back = ex.parse(text, _VARS)
    for at in _assignments(7, count=25):
        assert ex.evaluate(back, at) == ex.evaluate(e, at)


@settings(max_examples=40, deadline=None)
@given(e=_exprs(3))
def test_identity_substitution_evaluates_equal(e):
    sub = ex.substitute(e, {n: ex.var(n) for n in _VARS})
    for at in _assignments(11, count=10):
        assert ex.evaluate(sub, at) == ex.evaluate(e, at)


@settings(max_examples=40, deadline=None)
@given(e=_exprs(3))
def test_compiled_backends_match_evaluate(e):
    scalar = ex.compile_scalar([e], _VARS)
    batch = ex.compile_batch([e], _VARS)
    pts = np.array([[a[n] for n in _VARS] for a in _assignments(13, count=16)])
    vals_batch = batch(pts)[0]
    for row, want_at in zip(pts, _assignments(13, count=16)):
        want = ex.evaluate(e, want_at)
        assert scalar(row)[0] == pytest.approx(want, rel=1e-12, abs=1e-12)
    ref = np.array([ex.evaluate(e, a) for a in _assignments(13, count=16)])
    np.testing.assert_allclose(vals_batch, ref, rtol=1e-12, atol=1e-12)


def test_derivative_of_deep_chain_is_stack_safe():
    e = ex.var("x1")
    for _ in range(5000):
        e = ex.add(ex.mul(e, ex.const(0.5)), ex.var("x2"))
    d = ex.differentiate(e, "x2")
    assert ex.evaluate(d, {"x1": 0.0, "x2": 0.0}) > 1.0
