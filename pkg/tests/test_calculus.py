import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.integrate import quad

from mvconvex.calculus import (
    EPS,
    Grid,
    IntegrationWarning,
    Tolerance,
    check_convex,
    check_monotone,
    difference_quotient,
    integrate_monotone,
    integrate_monotone_detail,
    kronecker_points,
    make_grid,
    one_sided_derivative,
    one_sided_derivatives,
    one_sided_limit,
    sampling_range,
)
from mvconvex.fnexpr import Interval, function

reals = st.floats(min_value=-10, max_value=10, allow_nan=False)


class TestTolerance:
    def test_defaults(self):
        t = Tolerance()
        assert (t.abs_tol, t.rel_tol, t.strict_margin) == (1e-9, 1e-9, 1e-7)

    def test_rejects_all_zero_and_negative(self):
        with pytest.raises(ValueError):
            Tolerance(0, 0, 0)
        with pytest.raises(ValueError):
            Tolerance(-1e-9)


class TestGrid:
    def test_needs_three_increasing_points(self):
        with pytest.raises(ValueError):
            Grid(np.array([0.0, 1.0]), Interval.closed(0, 1))
        with pytest.raises(ValueError):
            Grid(np.array([0.0, 0.5, 0.5]), Interval.closed(0, 1))

    def test_points_inside_interval(self):
        with pytest.raises(ValueError):
            Grid(np.array([0.0, 0.5, 1.0]), Interval.open(0, 1))

    def test_open_sides_are_shrunk(self):
        tol = Tolerance()
        g = make_grid(Interval.open(0, 1), 11, 0, tol=tol)
        assert g.points[0] == pytest.approx(1e-9, abs=1e-24)
        assert g.points[-1] == pytest.approx(1 - 1e-9, abs=1e-15)
        closed = make_grid(Interval.closed(0, 1), 11, 0)
        assert closed.points[0] == 0.0 and closed.points[-1] == 1.0

    def test_unbounded_uses_default_window(self):
        lo, hi, window = sampling_range(Interval.real_line())
        assert window == (-10.0, 10.0) and (lo, hi) == window

    def test_window_intersects_interval(self):
        lo, hi, window = sampling_range(Interval.open(0, math.inf), (0.01, 5))
        assert window == (0.01, 5) and lo == 0.01

    def test_default_grid_size(self):
        g = make_grid(Interval.open(-2, 2))
        assert len(g) == 201 + 64
        assert g.to_dict()["n_uniform"] == 201
        assert len(g.to_dict()["extra_points"]) == 64

    def test_symmetric_grid_contains_zero(self):
        assert 0.0 in make_grid(Interval.open(-2, 2), 201).points

    def test_deterministic(self):
        a = make_grid(Interval.open(-1, 3), 101)
        b = make_grid(Interval.open(-1, 3), 101)
        assert np.array_equal(a.points, b.points)
        assert not np.array_equal(kronecker_points(8, 0), kronecker_points(8, 1))

    def test_points_read_only(self):
        g = make_grid(Interval.open(0, 1), 11)
        with pytest.raises(ValueError):
            g.points[0] = 5.0


class TestDifferenceQuotient:
    def test_examples(self):
        assert difference_quotient(function("x^2"), 0.0, 2.0) == 2.0
        assert difference_quotient(function("exp(x)"), 0.0, 1.0) == pytest.approx(math.e - 1, rel=1e-15)
        assert difference_quotient(function("abs(x)"), -1.0, 1.0) == 0.0

    def test_degenerate_pair(self):
        with pytest.raises(ValueError):
            difference_quotient(function("x"), 1.0, 1.0)

    @given(reals, reals)
    def test_symmetric_exactly(self, x, y):
        assume(x != y)
        f = function("exp(x/3) - x^2")
        assert difference_quotient(f, x, y) == difference_quotient(f, y, x)


class TestOneSidedDerivative:
    def test_abs_at_zero(self):
        f = function("abs(x)")
        right = one_sided_derivative(f, 0.0, "right")
        left = one_sided_derivative(f, 0.0, "left")
        assert right.value == pytest.approx(1.0, abs=1e-6)
        assert left.value == pytest.approx(-1.0, abs=1e-6)
        assert right.side == "right" and left.side == "left"
        assert math.isfinite(right.est_error) and right.est_error >= 0

    @pytest.mark.parametrize("side", ["left", "right"])
    def test_square_at_one(self, side):
        assert one_sided_derivative(function("x^2"), 1.0, side).value == pytest.approx(2.0, abs=1e-8)

    @pytest.mark.parametrize("x", [-3.0, -0.2, 0.0, 0.7, 4.0])
    @pytest.mark.parametrize("side", ["left", "right"])
    def test_against_mpmath(self, x, side):
        source = "exp(x/2) + x^3/5"
        oracle = float(mpmath.diff(lambda t: mpmath.exp(t / 2) + t**3 / 5, x))
        got = one_sided_derivative(function(source), x, side)
        assert got.value == pytest.approx(oracle, abs=1e-7)

    def test_respects_domain_edge(self):
        f = function("sqrt(x)", Interval(0, math.inf, lo_closed=True))
        d = one_sided_derivative(f, 1e-6, "left")
        assert d.value == pytest.approx(0.5 / math.sqrt(1e-6), rel=1e-3)
        assert math.isnan(one_sided_derivative(f, 0.0, "left").value)

    def test_kink_off_center(self):
        f = function("max(x, 2*x - 1)")
        assert one_sided_derivative(f, 1.0, "left").value == pytest.approx(1.0, abs=1e-9)
        assert one_sided_derivative(f, 1.0, "right").value == pytest.approx(2.0, abs=1e-9)

    @given(reals, reals, st.lists(reals, min_size=1, max_size=5))
    def test_affine_within_rounding_floor(self, a, b, xs):
        # 1e-10 plus the rounding floor of the base step, the power of two
        # at or below 1e-5 * max(1, |x|)
        f = function(f"({a!r})*x + ({b!r})")
        xs = np.array(xs)
        step = np.exp2(np.floor(np.log2(np.maximum(1e-5, 1e-5 * np.abs(xs)))))
        floor = 8 * EPS * (np.abs(a * xs) + abs(b)) / step
        for side in ("left", "right"):
            d, _ = one_sided_derivatives(f, xs, side)
            assert np.all(np.abs(d - a) <= 1e-10 + floor)

    @given(st.integers(-4, 4), st.integers(-4, 4), st.lists(st.integers(-64, 64), min_size=1, max_size=5))
    def test_affine_small_integer_coefficients(self, a, b, ks):
        xs = np.array(ks) / 16.0
        f = function(f"({a})*x + ({b})")
        for side in ("left", "right"):
            d, _ = one_sided_derivatives(f, xs, side)
            assert np.all(np.abs(d - a) <= 1e-10)


class TestOneSidedLimit:
    def test_sgn_at_zero(self):
        g = function("sgn(x)")
        assert one_sided_limit(g, 0.0, "right").value == 1.0
        assert one_sided_limit(g, 0.0, "left").value == -1.0

    @pytest.mark.parametrize("side", ["left", "right"])
    def test_continuous_point(self, side):
        assert one_sided_limit(function("x"), 0.5, side).value == pytest.approx(0.5, abs=1e-12)

    def test_removable_singularity(self):
        lim = one_sided_limit(function("(exp(x) - 1)/x").with_overrides((0.0, 99.0)), 0.0, "right")
        assert lim.value == pytest.approx(1.0, abs=1e-9)

    def test_step_with_offset(self):
        g = function("sgn(x - 1) + 2")
        assert one_sided_limit(g, 1.0, "left").value == 1.0
        assert one_sided_limit(g, 1.0, "right").value == 3.0


class TestIntegrateMonotone:
    def test_linear(self):
        assert integrate_monotone(function("2*x"), 0.0, 1.0) == pytest.approx(1.0, abs=1e-9)

    def test_sgn_reversed_orientation(self):
        assert integrate_monotone(function("sgn(x)"), 0.0, -2.0) == pytest.approx(2.0, abs=1e-9)

    def test_exp(self):
        assert integrate_monotone(function("exp(x)"), 0.0, 1.0) == pytest.approx(math.e - 1, abs=1e-9)

    @pytest.mark.parametrize("source, a, b", [("exp(x)", -1.0, 2.0), ("x^3", -1.0, 1.5), ("max(0, x - 0.3)", -1.0, 1.0), ("sgn(x - 0.1234)", -1.0, 2.0)])
    def test_against_quad(self, source, a, b):
        oracle, _ = quad(lambda t: float(function(source)(t)), a, b, points=[0.3, 0.1234], limit=200)
        detail = integrate_monotone_detail(function(source), a, b, Tolerance())
        assert detail.converged
        assert detail.value == pytest.approx(oracle, abs=1e-8)

    def test_zero_length(self):
        assert integrate_monotone(function("x"), 1.0, 1.0) == 0.0

    def test_budget_warning(self):
        g = function("sgn(x - 0.1)")
        detail = integrate_monotone_detail(g, 0.0, 1.0, Tolerance(1e-15, 0, 0), max_points=256)
        assert not detail.converged
        assert detail.error_bound > 0
        with pytest.warns(IntegrationWarning):
            integrate_monotone(g, 0.0, 1.0, Tolerance(1e-18, 0, 0))

    @given(
        st.floats(-3, 3),
        st.floats(-3, 3),
        st.floats(-3, 3),
    )
    def test_additivity(self, a, b, c):
        g = function("exp(x/2) + sgn(x - 0.25)")
        tol = Tolerance()
        ab = integrate_monotone_detail(g, a, b, tol)
        bc = integrate_monotone_detail(g, b, c, tol)
        ac = integrate_monotone_detail(g, a, c, tol)
        assert abs(ab.value + bc.value - ac.value) <= ab.error_bound + bc.error_bound + ac.error_bound + 1e-12

    @given(st.floats(-2, 2), st.floats(0.05, 1.0))
    def test_fundamental_theorem(self, x, width):
        # derivative of the integrated antiderivative recovers g at continuity points
        g = function("exp(x) + x")
        F = lambda t: np.array([integrate_monotone(g, 0.0, float(v)) for v in np.atleast_1d(t)])
        h = 1e-3
        slope = (F(x + h)[0] - F(x - h)[0]) / (2 * h)
        assert slope == pytest.approx(g(x), abs=1e-5)


class TestCheckMonotone:
    def test_exp_increasing(self):
        assert check_monotone(function("exp(x)"), make_grid(Interval.closed(-1, 1), 101)).passed

    def test_decreasing_fails_with_witness(self):
        r = check_monotone(function("-x"), make_grid(Interval.closed(-1, 1), 101))
        assert not r.passed
        w = r.witnesses[0]
        assert w["x"] < w["y"]

    def test_sgn_step(self):
        r = check_monotone(function("sgn(x)"), make_grid(Interval.closed(-2, 2), 101))
        assert r.passed and not r.details["strict"]

    def test_decreasing_mode(self):
        assert check_monotone(function("-x"), make_grid(Interval.closed(-1, 1), 11), decreasing=True).passed


class TestCheckConvex:
    def test_square(self):
        assert check_convex(function("x^2"), make_grid(Interval.open(-2, 2))).passed

    def test_abs(self):
        assert check_convex(function("abs(x)"), make_grid(Interval.open(-2, 2))).passed

    def test_concave_fails_with_triple(self):
        r = check_convex(function("-x^2"), make_grid(Interval.open(-2, 2)))
        assert not r.passed
        w = r.witnesses[0]
        assert w["x"] < w["y"] < w["z"]

    @given(st.floats(-2, 2), st.floats(0.1, 3))
    def test_convex_family(self, shift, scale):
        f = function(f"{scale!r}*abs(x - ({shift!r})) + exp(x/3)")
        assert check_convex(f, make_grid(Interval.open(-3, 3), 61, 16)).passed
