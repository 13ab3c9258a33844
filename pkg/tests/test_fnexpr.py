import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mvconvex.calculus import make_grid
from mvconvex.fnexpr import (
    BinOp,
    Call,
    DomainError,
    EvalError,
    ExprSyntaxError,
    Interval,
    Neg,
    Num,
    Var,
    eval_grid,
    evaluate,
    function,
    parse,
    substitute,
    to_source,
)


class TestInterval:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Interval(1, 1)
        with pytest.raises(ValueError):
            Interval(2, 1)

    def test_unbounded_end_cannot_be_closed(self):
        with pytest.raises(ValueError):
            Interval(-math.inf, 0, lo_closed=True)

    def test_membership_honours_closedness(self):
        half = Interval(0, 1, lo_closed=True)
        assert half.contains(0.0)
        assert not half.contains(1.0)
        assert list(half.contains([-0.5, 0.5])) == [False, True]
        assert not half.interior_contains(0.0)

    def test_str(self):
        assert str(Interval(0, 1, True, False)) == "[0, 1)"
        assert str(Interval.real_line()) == "(-inf, inf)"


class TestParse:
    def test_single_call(self):
        assert parse("exp(x)") == Call("exp", (Var(),))

    def test_power_binds_tighter_than_product(self):
        expected = BinOp(
            "+",
            Call("abs", (Var(),)),
            BinOp("*", Num(2.0), BinOp("^", Var(), Num(2.0))),
        )
        assert parse("abs(x) + 2*x^2") == expected

    def test_unary_minus_looser_than_power(self):
        assert parse("-x^2") == Neg(BinOp("^", Var(), Num(2.0)))

    def test_power_is_right_associative(self):
        assert parse("2^3^2") == BinOp("^", Num(2.0), BinOp("^", Num(3.0), Num(2.0)))
        assert function("2^3^2")(0.0) == 512.0

    def test_subtraction_left_associative(self):
        assert function("1-2-3")(0.0) == -4.0

    def test_two_argument_calls(self):
        assert parse("max(x, 1)") == Call("max", (Var(), Num(1.0)))

    def test_number_forms(self):
        assert function("1.5e2 + .5 + 3.")(0.0) == 153.5

    @pytest.mark.parametrize(
        "source, offset",
        [("2 +", 3), ("", 0), ("(x", 2), ("exp x", 4), ("x x", 2), ("foo(x)", 0), ("exp(x, 1)", 8), ("min(x)", 5), ("2 $ 3", 2)],
    )
    def test_syntax_errors_report_offset(self, source, offset):
        with pytest.raises(ExprSyntaxError) as info:
            parse(source)
        assert info.value.offset == offset

    def test_syntax_error_lists_expected_tokens(self):
        with pytest.raises(ExprSyntaxError) as info:
            parse("2 +")
        assert "NUMBER" in info.value.expected and "x" in info.value.expected


class TestEvaluate:
    def test_exp_at_zero(self):
        assert function("exp(x)")(0.0) == 1.0

    def test_sgn(self):
        f = function("sgn(x)")
        assert f(-2.0) == -1.0 and f(0.0) == 0.0 and f(3.0) == 1.0

    def test_log_of_negative_names_subexpression(self):
        with pytest.raises(EvalError) as info:
            function("1 + log(x)")(-1.0)
        assert info.value.subexpr == "log(x)"
        assert info.value.point == -1.0

    @pytest.mark.parametrize("source, x", [("1/x", 0.0), ("sqrt(x)", -1.0), ("x^0.5", -4.0), ("x^(-1)", 0.0), ("exp(x)", 1000.0)])
    def test_partial_functions(self, source, x):
        with pytest.raises(EvalError):
            function(source)(x)

    def test_integer_power_of_negative_base(self):
        assert function("x^3")(-2.0) == -8.0
        assert function("x^(-2)")(-2.0) == 0.25

    def test_domain_violation(self):
        f = function("x", Interval.open(0, 1))
        with pytest.raises(DomainError):
            f(1.0)
        assert Interval.closed(0, 1).contains(1.0)
        assert function("x", Interval.closed(0, 1))(1.0) == 1.0

    def test_overrides_pin_values(self):
        g = function("sgn(x)").with_overrides((0.0, 0.5))
        assert g(0.0) == 0.5
        assert list(g(np.array([-1.0, 0.0, 1.0]))) == [-1.0, 0.5, 1.0]

    def test_override_skips_failing_body(self):
        g = function("1/x").with_overrides((0.0, 7.0))
        assert g(0.0) == 7.0
        with pytest.raises(EvalError) as info:
            function("1/(x-1)").with_overrides((0.0, 1.0))(np.array([0.0, 2.0, 1.0]))
        assert info.value.index == 2

    def test_vector_error_carries_index(self):
        with pytest.raises(EvalError) as info:
            function("log(x)")(np.array([1.0, 2.0, -3.0]))
        assert info.value.index == 2


class TestEvalGrid:
    def test_identity(self):
        assert list(eval_grid(function("x"), [0.0, 1.0, 2.0])) == [0.0, 1.0, 2.0]

    def test_even_power(self):
        assert list(eval_grid(function("x^2"), [-1.0, 0.0, 1.0])) == [1.0, 0.0, 1.0]

    def test_log_on_shrunk_open_interval_matches_scalar_loop(self):
        interval = Interval.open(0, 1)
        grid = make_grid(interval, 51)
        f = function("log(x)", interval)
        values = eval_grid(f, grid)
        assert np.all(np.isfinite(values))
        assert grid.points[0] > 0
        np.testing.assert_array_equal(values, [math.log(p) for p in grid.points])


# -- properties ----------------------------------------------------------------

_leaf = st.one_of(
    st.just(Var()),
    st.floats(min_value=-50, max_value=50, allow_nan=False).map(lambda v: Num(abs(v))),
)


def _extend(children):
    unary = st.builds(Neg, children)
    binary = st.builds(BinOp, st.sampled_from(["+", "-", "*", "/", "^"]), children, children)
    call1 = st.builds(lambda n, a: Call(n, (a,)), st.sampled_from(["exp", "log", "abs", "sgn", "sqrt"]), children)
    call2 = st.builds(lambda n, a, b: Call(n, (a, b)), st.sampled_from(["min", "max"]), children, children)
    return st.one_of(unary, binary, call1, call2)


expressions = st.recursive(_leaf, _extend, max_leaves=12)


@given(expressions)
def test_print_parse_round_trip(node):
    text = to_source(node)
    reparsed = parse(text)
    assert parse(to_source(reparsed)) == reparsed
    assert to_source(reparsed) == text


@given(expressions, st.floats(min_value=-5, max_value=5, allow_nan=False))
def test_evaluation_is_pure(node, x):
    try:
        first = evaluate(node, x)
    except EvalError:
        with pytest.raises(EvalError):
            evaluate(node, x)
        return
    second = evaluate(node, x)
    assert np.array_equal(np.asarray(first), np.asarray(second))


@given(expressions, st.lists(st.floats(min_value=-5, max_value=5, allow_nan=False), min_size=1, max_size=8))
def test_vector_evaluation_matches_scalar(node, xs):
    f = function(node)
    try:
        vec = f(np.array(xs))
    except EvalError:
        return
    assert np.array_equal(vec, np.array([f(v) for v in xs]))


@given(st.floats(min_value=-3, max_value=3, allow_nan=False))
def test_substitute_composes(x):
    outer = parse("x^2 + 1")
    inner = parse("2*x - 1")
    composed = function(substitute(outer, inner))
    assert composed(x) == pytest.approx((2 * x - 1) ** 2 + 1, rel=1e-15, abs=1e-15)
