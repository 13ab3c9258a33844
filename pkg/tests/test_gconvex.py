import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mvconvex.calculus import Tolerance, check_monotone, grid_from_points, make_grid
from mvconvex.fnexpr import DomainError, Interval, function
from mvconvex.gconvex import (
    CONDITIONS,
    DQBSpec,
    LambdaBlend,
    bounds_certificate,
    construct_from_quotient_bound,
    dqb_family,
    equivalence_suite,
    gconvex_check,
    sandwich_check,
)
from mvconvex.mv import mv_check


def sgn_at_zero(alpha):
    return function("sgn(x)").with_overrides((0.0, float(alpha)))


@pytest.fixture(scope="module")
def grid():
    return make_grid(Interval.open(-2, 2), 101, 32)


@pytest.fixture(scope="module")
def grid0():
    # contains 0 exactly, where the kink of |x| sits
    return make_grid(Interval.closed(-2, 2), 101, 32)


class TestSupportInequality:
    def test_abs_sign(self, grid0):
        assert gconvex_check(function("abs(x)"), function("sgn(x)"), grid0).passed

    def test_parabola_derivative(self, grid):
        assert gconvex_check(function("x^2"), function("2*x"), grid).passed

    def test_parabola_steep_slope_witness(self):
        r = gconvex_check(function("x^2"), function("3*x"), grid_from_points([0.0, 1.0, 1.5]))
        assert not r.passed
        (w,) = r.witnesses
        assert (w["x"], w["y"]) == (1.5, 1.0)
        assert w["lhs"] == 2.25 and w["rhs"] == 2.5

    def test_witnesses_ordered_by_margin(self, grid):
        r = gconvex_check(function("x^2"), function("3*x"), grid)
        margins = [w["margin"] for w in r.witnesses]
        assert margins == sorted(margins)
        assert 0 < len(margins) <= 20


class TestEquivalenceSuite:
    def test_parabola_all_pass(self, grid):
        r = equivalence_suite(function("x^2"), function("2*x"), grid)
        assert r.passed
        assert set(r.per_condition) == set(CONDITIONS)
        assert all(r.per_condition.values())

    def test_abs_alpha_zero(self, grid0):
        r = equivalence_suite(function("abs(x)"), sgn_at_zero(0.0), grid0)
        assert r.passed and not r.consistency_alarm

    def test_exp_shifted_all_fail(self, grid):
        r = equivalence_suite(function("exp(x)"), function("exp(x) + 0.5"), grid)
        assert not r.passed
        assert not any(r.per_condition.values())
        assert not r.consistency_alarm
        assert r.witnesses

    def test_quotient_lower_side_at_origin(self):
        # g(0) = 1.5 exceeds the chord slope of exp over [0, 0.1]
        dq = (math.exp(0.1) - 1) / 0.1
        assert 1.5 > dq
        r = equivalence_suite(function("exp(x)"), function("exp(x) + 0.5"), grid_from_points([0.0, 0.1, 0.2]))
        assert not r.per_condition["quotient"]

    def test_open_lambda_verdict_reported(self, grid):
        r = equivalence_suite(function("x^2"), function("2*x"), grid)
        assert set(r.details["open_lambda_verdict"]) == {"blend_x", "blend_y"}

    @given(
        st.sampled_from(["x^2", "exp(x)", "abs(x)", "max(x, 2*x - 1)", "x^4"]),
        st.sampled_from([0.0, 0.5, -0.5, 1.0]),
    )
    def test_conditions_agree(self, src, shift):
        derivs = {
            "x^2": "2*x",
            "exp(x)": "exp(x)",
            "abs(x)": "sgn(x)",
            "max(x, 2*x - 1)": "1 + (sgn(x - 1) + 1)/2",
            "x^4": "4*x^3",
        }
        g = function(f"{derivs[src]} + ({shift})")
        grid = make_grid(Interval.closed(-2, 2), 25, 8)
        r = equivalence_suite(function(src), g, grid)
        assert not r.consistency_alarm
        assert len(set(r.per_condition.values())) == 1
        assert r.passed == (shift == 0.0)


class TestBoundsCertificate:
    @pytest.mark.parametrize("alpha", [-1, -0.5, 0, 0.5, 1])
    def test_abs_alpha_family(self, grid0, alpha):
        assert bounds_certificate(function("abs(x)"), sgn_at_zero(alpha), grid0).passed

    def test_abs_value_two_fails_at_origin(self, grid0):
        r = bounds_certificate(function("abs(x)"), sgn_at_zero(2.0), grid0)
        assert not r.passed
        assert [w["x"] for w in r.witnesses] == [0.0]

    def test_parabola_limits_match(self, grid):
        r = bounds_certificate(function("x^2"), function("2*x"), grid)
        assert r.passed

    def test_nonconvex_rejected(self, grid):
        assert not bounds_certificate(function("x^3"), function("3*x^2"), grid).passed

    @given(
        st.sampled_from(["x^2", "abs(x)", "exp(x)", "x^2 - x"]),
        st.sampled_from([-0.3, 0.0, 0.3]),
    )
    def test_agrees_with_support_inequality(self, src, shift):
        derivs = {"x^2": "2*x", "abs(x)": "sgn(x)", "exp(x)": "exp(x)", "x^2 - x": "2*x - 1"}
        g = function(f"{derivs[src]} + ({shift})")
        grid = make_grid(Interval.closed(-2, 2), 41, 8)
        f = function(src)
        assert gconvex_check(f, g, grid).passed == bounds_certificate(f, g, grid).passed


class TestConstruction:
    def test_sign_gives_abs(self):
        f = construct_from_quotient_bound(function("sgn(x)"), 0.0, 0.0, Interval.closed(-2, 2))
        x = np.linspace(-2, 2, 2001)
        assert np.max(np.abs(f(x) - np.abs(x))) <= 1e-6

    def test_linear_gives_parabola(self):
        f = construct_from_quotient_bound(function("2*x"), 0.0, 0.0, Interval.closed(-2, 2))
        x = np.linspace(-2, 2, 777)
        assert np.max(np.abs(f(x) - x**2)) <= 1e-12

    def test_exp_gives_exp(self):
        f = construct_from_quotient_bound(function("exp(x)"), 0.0, 1.0, Interval.closed(-1, 1))
        x = np.linspace(-1, 1, 1001)
        assert np.max(np.abs(f(x) - np.exp(x))) <= 1e-6

    def test_off_mesh_point(self):
        f = construct_from_quotient_bound(function("exp(x)"), 0.0, 1.0, Interval.closed(-1, 1))
        assert f(math.pi / 4) == pytest.approx(math.exp(math.pi / 4), abs=1e-13)

    def test_outside_domain(self):
        f = construct_from_quotient_bound(function("2*x"), 0.0, 0.0, Interval.closed(-1, 1))
        with pytest.raises(DomainError):
            f(1.5)

    def test_decreasing_bound_rejected(self):
        with pytest.raises(ValueError):
            construct_from_quotient_bound(function("-x"), 0.0, 0.0, Interval.closed(-1, 1))

    def test_anchor_must_be_interior(self):
        with pytest.raises(ValueError):
            construct_from_quotient_bound(function("x"), 1.0, 0.0, Interval.closed(-1, 1))

    @given(
        st.sampled_from(["sgn(x)", "2*x", "exp(x)", "x^3", "max(x, 0)", "sgn(x - 0.3) + x"]),
        st.floats(-1.5, 1.5),
        st.floats(-5, 5),
    )
    def test_round_trip(self, src, c, v):
        g = function(src)
        f = construct_from_quotient_bound(g, c, v, Interval.closed(-2, 2), check_grid_size=51)
        assert f(c) == v
        assert gconvex_check(f, g, make_grid(Interval.closed(-2, 2), 41, 8)).passed


class TestBlendFamily:
    def test_abs_half_is_sign_with_zero(self, grid0):
        g = dqb_family(function("abs(x)"), LambdaBlend.constant(0.5), grid0)
        assert g(0.0) == 0.0
        assert g(0.7) == pytest.approx(1.0, abs=1e-8)
        assert g(-0.3) == pytest.approx(-1.0, abs=1e-8)

    def test_abs_zero_takes_right_derivative(self, grid0):
        g = dqb_family(function("abs(x)"), LambdaBlend.constant(0.0), grid0)
        assert g(0.0) == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("lam", [0.0, 0.3, 1.0])
    def test_smooth_ignores_lambda(self, grid, lam):
        g = dqb_family(function("x^2"), LambdaBlend.constant(lam), grid)
        assert np.allclose(g.samples, 2 * grid.points, atol=1e-8)

    def test_nonconvex_rejected(self, grid):
        with pytest.raises(ValueError):
            dqb_family(function("-x^2"), LambdaBlend.constant(0.5), grid)

    def test_weights_out_of_range(self):
        with pytest.raises(ValueError):
            LambdaBlend.constant(1.5)
        blend = LambdaBlend(function("x"))
        with pytest.raises(ValueError):
            blend(np.array([0.5, 2.0]))

    @given(
        st.sampled_from(["abs(x)", "exp(x)", "x^2", "max(x, 2*x - 1)", "abs(x) + x^2", "exp(abs(x))"]),
        st.floats(0, 1),
    )
    def test_soundness(self, src, lam):
        grid = make_grid(Interval.closed(-2, 2), 41, 8)
        f = function(src)
        g = dqb_family(f, LambdaBlend.constant(lam), grid)
        assert bounds_certificate(f, g, grid).passed

    def test_varying_lambda(self, grid0):
        blend = LambdaBlend(function("min(max((x + 2)/4, 0), 1)"))
        f = function("abs(x)")
        assert bounds_certificate(f, dqb_family(f, blend, grid0), grid0).passed


class TestExceptions:
    def test_valid_exception(self):
        spec = DQBSpec(function("abs(x)"), ((0.0, 0.25),))
        assert spec.validate()
        g = spec.slope_function()
        assert g(0.0) == 0.25
        assert g(1.0) == pytest.approx(1.0, abs=1e-8)

    def test_invalid_exception(self):
        assert not DQBSpec(function("abs(x)"), ((0.0, 1.5),)).validate()

    def test_exception_points_increasing(self):
        with pytest.raises(ValueError):
            DQBSpec(function("abs(x)"), ((1.0, 0.0), (0.0, 0.0)))

    def test_slope_function_certified(self, grid0):
        f = function("max(abs(x), 2*x - 1)")
        spec = DQBSpec(f, ((0.0, -0.5), (1.0, 1.5)))
        assert spec.validate()
        assert bounds_certificate(f, spec.slope_function(), grid0).passed


class TestSandwich:
    @pytest.mark.parametrize(
        "f,g",
        [("x^2", "2*x"), ("exp(x)", "exp(x)"), ("abs(x)", "sgn(x)")],
    )
    def test_examples(self, grid, f, g):
        assert sandwich_check(function(f), function(g), grid).passed

    def test_origin_required(self):
        f = function("log(x)", Interval.open(0, 2))
        with pytest.raises(ValueError):
            sandwich_check(f, function("1/x"), make_grid(Interval.open(0, 2), 11))


class TestRelations:
    def test_separation_example(self, grid0):
        f = function("abs(x)")
        g = sgn_at_zero(1.0)
        assert gconvex_check(f, g, grid0).passed
        r = mv_check(f, g, grid0)
        assert not r.passed
        w = r.witnesses[0]
        assert w["x"] < 0 < w["y"]
        assert w["dq"] not in (-1.0, 1.0)

    @given(st.sampled_from([("x^2", "2*x"), ("exp(x)", "exp(x)"), ("x^3", "3*x^2"), ("x^2", "3*x"), ("x", "1")]))
    def test_increasing_mv_function_gives_convexity(self, pair):
        grid = make_grid(Interval.closed(-1, 1), 21, 4)
        f, g = function(pair[0]), function(pair[1])
        if mv_check(f, g, grid).passed and check_monotone(g, grid).passed:
            assert gconvex_check(f, g, grid).passed

    @given(st.floats(-3, 3), st.sampled_from([0.0, 1e-12, 1e-6, 1e-2, 1.0]))
    def test_zero_slope_means_constant(self, level, eps):
        grid = make_grid(Interval.closed(-1, 1), 21, 4)
        tol = Tolerance()
        f = function(f"({level!r}) + ({eps!r})*x")
        values = f(grid.points)
        flat = np.ptp(values) <= tol.bound(np.max(np.abs(values)))
        assert gconvex_check(f, function("0"), grid, tol).passed == flat
