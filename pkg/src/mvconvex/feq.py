"""Mean value functional equations and comparative-convexity systems.

Solvers return constructed functions (tabulated antiderivatives or ODE
solutions) that can be fed back into the checkers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .calculus import (
    EPS,
    NumericalBreakdown,
    Tolerance,
    _pair_slack,
    check_monotone,
    make_grid,
    one_sided_derivatives,
    sampling_range,
)
from .fnexpr import DomainError, EvalError, Interval
from .gconvex import antiderivative, gconvex_check
from .mv import MeanFunctionSample
from .report import CheckReport, worst_cases

BISECT_WIDTH = 1e-12
MAX_EXPANSIONS = 200
ODE_MIN_STEPS = 4096
ODE_MAX_STEPS = 2**20
ODE_LOCAL_TOL = 1e-10
PROBE_SIZE = 257


@dataclass
class FeqSolution:
    f: object
    eta_sampler: object
    params: dict
    details: dict = field(default_factory=dict)

    def eta(self, x, y):
        return self.eta_sampler(x, y)

    def to_dict(self):
        return {"params": self.params, "details": self.details}


@dataclass
class SystemVerdict:
    system: str
    passed: bool
    witnesses: list = field(default_factory=list)
    fitted_params: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    solution: object = None

    def __bool__(self):
        return self.passed

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"

    def to_dict(self):
        return {
            "system": self.system,
            "verdict": self.verdict,
            "witnesses": self.witnesses,
            "fitted_params": self.fitted_params,
            "notes": self.notes,
            "details": self.details,
        }


def _points(grid):
    return np.asarray(getattr(grid, "points", grid), dtype=float)


def _eval_each(h, values):
    """h at each value; entries where h raises become NaN, with the first error kept."""
    values = np.asarray(values, dtype=float)
    try:
        return np.asarray(h(values), dtype=float), None
    except EvalError as exc:
        first = exc
    out = np.full(values.shape, np.nan)
    for i, v in enumerate(values.ravel()):
        try:
            out.flat[i] = h(float(v))
        except EvalError:
            pass
    return out, first


class InverseFunction:
    """Numerical inverse of a strictly monotone continuous function by bisection.

    Brackets start from a probe grid over the sampled part of h's domain and
    expand outward (doubling on unbounded sides, halving the gap toward a
    finite edge) until they enclose the target.
    """

    def __init__(self, h, domain=None, window=None, tol=Tolerance(), width=BISECT_WIDTH):
        self.h = h
        self.source_domain = domain if domain is not None else getattr(h, "domain", Interval.real_line())
        lo, hi, _ = sampling_range(self.source_domain, window, tol)
        probe = np.linspace(lo, hi, PROBE_SIZE)
        vals = np.asarray(h(probe), dtype=float)
        self.increasing = bool(vals[-1] > vals[0])
        self._probe = probe
        self._probe_signed = vals if self.increasing else -vals
        self.lo, self.hi = lo, hi
        self.width = width
        self.domain = Interval.real_line()

    def _signed(self, t):
        v = np.asarray(self.h(t), dtype=float)
        return v if self.increasing else -v

    def _expand(self, edge_val, side, targets):
        """Push an endpoint outward until the signed value passes every target."""
        dom = self.source_domain
        limit = dom.hi if side > 0 else dom.lo
        point = np.full(targets.shape, edge_val)
        for _ in range(MAX_EXPANSIONS):
            val = self._signed(point)
            done = val >= targets if side > 0 else val <= targets
            if done.all():
                return point
            if math.isfinite(limit):
                nxt = point + (limit - point) / 2.0
            else:
                nxt = point + side * np.maximum(1.0, np.abs(point))
            point = np.where(done, point, nxt)
        raise NumericalBreakdown(f"inversion bracket not found for target {float(targets[~done][0])!r}")

    def __call__(self, s):
        arr = np.asarray(s, dtype=float)
        target = np.atleast_1d(arr).ravel()
        if not np.all(np.isfinite(target)):
            raise NumericalBreakdown("cannot invert a non-finite value")
        signed = target if self.increasing else -target
        # start from the probe cell holding the target, when there is one
        k = np.clip(np.searchsorted(self._probe_signed, signed), 1, self._probe.size - 1)
        a = self._probe[k - 1].copy()
        b = self._probe[k].copy()
        low = self._signed(a) > signed
        if low.any():
            a[low] = self._expand(self.lo, -1, signed[low])
            b[low] = self.lo
        high = self._signed(b) < signed
        if high.any():
            b[high] = self._expand(self.hi, 1, signed[high])
            a[high] = self.hi
        for _ in range(400):
            if np.all(b - a <= self.width * np.maximum(1.0, np.abs(a))):
                break
            m = 0.5 * (a + b)
            below = self._signed(m) < signed
            a = np.where(below, m, a)
            b = np.where(below, b, m)
        out = 0.5 * (a + b)
        return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def _require_strict_monotone(h, domain, tol, window=None, what="h"):
    probe = make_grid(domain, PROBE_SIZE, 0, window, tol)
    inc = check_monotone(h, probe, tol)
    dec = check_monotone(h, probe, tol, decreasing=True)
    mono = inc if inc.passed else dec
    if not mono.passed:
        raise ValueError(f"{what} is not monotone on {domain}")
    if not mono.details.get("strict", False):
        raise ValueError(f"{what} is not strictly monotone on {domain}")
    return inc.passed


def _dq_matrix(fx, x):
    iu = np.triu_indices(x.size, 1)
    a, b = x[iu[0]], x[iu[1]]
    dq = (fx[iu[1]] - fx[iu[0]]) / (b - a)
    return a, b, dq


def mv_inequality_check(f, h, grid, tol=Tolerance()) -> CheckReport:
    """0 < (h(DQ(x, y)) - x) / (y - x) < 1 for every grid pair, by strict_margin."""
    x = _points(grid)
    fx = np.asarray(f(x), dtype=float)
    a, b, dq = _dq_matrix(fx, x)
    hv, err = _eval_each(h, dq)
    ratio = (hv - a) / (b - a)
    margin = np.minimum(ratio, 1.0 - ratio) - tol.strict_margin
    margin = np.where(np.isnan(margin), -np.inf, margin)
    witnesses = worst_cases(margin, {"x": a, "y": b, "dq": dq, "h_dq": hv, "ratio": ratio})
    notes = []
    if err is not None:
        bad = int(np.isnan(hv).sum())
        notes.append(f"h undefined at {bad} quotient values; first: {err}")
    return CheckReport(
        name="mv_inequality",
        passed=bool(np.all(margin >= 0)),
        checked=int(a.size),
        worst_margin=float(margin.min()),
        witnesses=witnesses,
        notes=notes,
    )


def _integrate(g, domain, c, f_c, tol, window):
    _, _, (lo, hi) = sampling_range(domain, window, tol)
    if not lo < c < hi:
        raise ValueError(f"anchor c={c} must be interior to [{lo}, {hi}]")
    dom = Interval(lo, hi, lo > domain.lo or domain.lo_closed, hi < domain.hi or domain.hi_closed)
    return antiderivative(g, float(c), float(f_c), lo, hi, dom, tol)


def solve_mv_inequality(h, domain, c, f_c, tol=Tolerance(), window=None, h_window=None) -> FeqSolution:
    """f = f_c + integral from c of h^{-1}; then h(DQ_f(x, y)) lies strictly between x and y.

    *domain* is where f lives; h must be strictly monotone and continuous
    on its own domain.
    """
    h_domain = getattr(h, "domain", Interval.real_line())
    _require_strict_monotone(h, h_domain, tol, h_window)
    hinv = InverseFunction(h, h_domain, h_window, tol)
    f = _integrate(hinv, domain, c, f_c, tol, window)

    def eta(x, y):
        return h((f(y) - f(x)) / (y - x))

    return FeqSolution(
        f=f,
        eta_sampler=eta,
        params={"c": float(c), "f_c": float(f_c)},
        details={"integration_error": f.error_estimate, "inverse_increasing": hinv.increasing},
    )


def solve_mv_equation(g, domain, c, f_c, tol=Tolerance(), window=None) -> FeqSolution:
    """f = f_c + integral from c of g, with mean eta(x, y) = g^{-1}(DQ_f(x, y))."""
    _require_strict_monotone(g, domain, tol, window, what="g")
    f = _integrate(g, domain, c, f_c, tol, window)
    ginv = InverseFunction(g, f.domain, None, tol)

    def eta(x, y):
        return ginv((f(y) - f(x)) / (y - x))

    return FeqSolution(
        f=f,
        eta_sampler=eta,
        params={"c": float(c), "f_c": float(f_c)},
        details={"integration_error": f.error_estimate},
    )


def eta_samples(solution, grid):
    """Mean samples of a solution over adjacent and end-anchored grid pairs."""
    x = _points(grid)
    pairs = [(x[i], x[i + 1]) for i in range(x.size - 1)] + [(x[0], x[i]) for i in range(2, x.size)]
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    e = np.asarray(solution.eta(a, b), dtype=float)
    with np.errstate(all="ignore"):
        lam = (e - a) / (b - a)
    return [MeanFunctionSample(float(p), float(q), float(r), float(s)) for p, q, r, s in zip(a, b, e, lam)]


def uniqueness_probe(f, h, grid, tol=Tolerance()) -> CheckReport:
    """h(f'_+(x)) = x at every grid point (f'_- where there is no room on the right)."""
    x = _points(grid)
    dl, el = one_sided_derivatives(f, x, "left")
    dr, er = one_sided_derivatives(f, x, "right")
    d = np.where(np.isnan(dr), dl, dr)
    e = np.where(np.isnan(dr), el, er)
    notes = []
    kinks = np.isfinite(dl) & np.isfinite(dr) & (np.abs(dl - dr) > tol.bound(np.maximum(np.abs(dl), np.abs(dr))) + 4 * (el + er))
    if kinks.any():
        notes.append(f"f is not differentiable at {int(kinks.sum())} grid points")
    hv, err = _eval_each(h, d)
    # carry the derivative error through h by a symmetric difference
    hp, _ = _eval_each(h, d + 4 * e)
    hm, _ = _eval_each(h, d - 4 * e)
    spread = np.abs(hp - hm) / 2.0
    spread = np.where(np.isfinite(spread), spread, 0.0)
    margin = tol.bound(x) + spread + 16 * EPS * np.abs(x) - np.abs(hv - x)
    margin = np.where(np.isnan(margin), -np.inf, margin)
    if err is not None:
        notes.append(f"h undefined at some derivative values; first: {err}")
    return CheckReport(
        name="uniqueness_probe",
        passed=bool(np.all(margin >= 0)),
        checked=int(x.size),
        worst_margin=float(margin.min()),
        witnesses=worst_cases(margin, {"x": x, "derivative": d, "h_derivative": hv}),
        notes=notes,
        details={"max_abs_error": float(np.nanmax(np.abs(hv - x)))},
    )


def _sup(values):
    return float(np.max(np.abs(values))) if np.size(values) else 0.0


def _fit(basis, y):
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    return coef, _sup(basis @ coef - y)


def self_convexity_check(f, grid, tol=Tolerance()) -> SystemVerdict:
    """f(x) >= f(y)(1 + x - y) for all pairs, then a fit of f against lam * e^t."""
    x = _points(grid)
    report = gconvex_check(f, f, grid, tol)
    fx = np.asarray(f(x), dtype=float)
    dom = getattr(f, "domain", None)
    if dom is not None and dom.contains(0.0):
        lam = float(f(0.0))
        how = "value_at_zero"
        sup = _sup(fx - lam * np.exp(x))
    else:
        (lam,), sup = _fit(np.exp(x)[:, None], fx)
        lam = float(lam)
        how = "least_squares"
    return SystemVerdict(
        system="self_convex",
        passed=report.passed,
        witnesses=report.witnesses,
        fitted_params={"lambda": lam},
        details={"fit": how, "sup_distance": sup, "worst_margin": report.worst_margin},
    )


class SampledSolution:
    """Piecewise cubic Hermite interpolant of an ODE solution on [lo, hi]."""

    def __init__(self, t, y, dy, domain):
        self.t = t
        self.y = y
        self.domain = domain
        self._spline = CubicHermiteSpline(t, y, dy)

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        flat = np.atleast_1d(arr).ravel()
        outside = ~self.domain.contains(flat)
        if outside.any():
            idx = int(np.flatnonzero(outside)[0])
            raise DomainError(f"point outside domain {self.domain}", point=float(flat[idx]), index=idx)
        out = self._spline(flat)
        return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def _rk4_step(k, phi, t, y, h):
    """One classical RK4 step for y' = k y + phi(t); vectorized over t, y, h."""
    pm = np.asarray(phi(t + 0.5 * h), dtype=float)
    k1 = k * y + np.asarray(phi(t), dtype=float)
    k2 = k * (y + 0.5 * h * k1) + pm
    k3 = k * (y + 0.5 * h * k2) + pm
    k4 = k * (y + h * k3) + np.asarray(phi(t + h), dtype=float)
    return y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def _rk4(k, phi, t, y0):
    """RK4 along the node array t (either direction)."""
    y = np.empty(t.size)
    y[0] = y0
    mids = 0.5 * (t[:-1] + t[1:])
    pn = np.asarray(phi(t), dtype=float)
    pm = np.asarray(phi(mids), dtype=float) if mids.size else np.empty(0)
    h = np.diff(t)
    with np.errstate(over="raise", invalid="raise"):
        try:
            for i in range(t.size - 1):
                yi, hi = y[i], h[i]
                k1 = k * yi + pn[i]
                k2 = k * (yi + 0.5 * hi * k1) + pm[i]
                k3 = k * (yi + 0.5 * hi * k2) + pm[i]
                k4 = k * (yi + hi * k3) + pn[i + 1]
                y[i + 1] = yi + hi * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        except FloatingPointError as exc:
            raise NumericalBreakdown("ODE solution overflowed; narrow the window") from exc
    if not np.all(np.isfinite(y)):
        raise NumericalBreakdown("ODE solution overflowed; narrow the window")
    return y


def _ode_nodes(lo, hi, t0, n):
    t = (lo * (n - np.arange(n + 1)) + hi * np.arange(n + 1)) / n
    return np.unique(np.concatenate([t, [t0]]))


def _ode_both_ways(k, phi, t, t0, f0):
    i0 = int(np.flatnonzero(t == t0)[0])
    y = np.empty(t.size)
    y[i0:] = _rk4(k, phi, t[i0:], f0)
    y[: i0 + 1] = _rk4(k, phi, t[: i0 + 1][::-1], f0)[::-1]
    return y


def _local_errors(k, phi, t, y):
    """Step-doubling estimate |one step - two half steps| / 15 for every step."""
    h = np.diff(t)
    with np.errstate(all="ignore"):
        one = _rk4_step(k, phi, t[:-1], y[:-1], h)
        half = _rk4_step(k, phi, t[:-1], y[:-1], h / 2)
        two = _rk4_step(k, phi, t[:-1] + h / 2, half, h / 2)
    return np.abs(one - two) / 15.0


def _solve_ode(k, phi, lo, hi, t0, f0):
    n = ODE_MIN_STEPS
    while n <= ODE_MAX_STEPS:
        t = _ode_nodes(lo, hi, t0, n)
        y = _ode_both_ways(k, phi, t, t0, f0)
        local = _local_errors(k, phi, t, y)
        if np.all(local <= ODE_LOCAL_TOL * np.maximum(1.0, np.abs(y[1:]))):
            return t, y, n, float(local.max())
        n *= 2
    raise NumericalBreakdown(f"ODE step budget of {ODE_MAX_STEPS} steps exhausted")


class _LinearSlope:
    def __init__(self, k, f, phi, domain):
        self.k, self.f, self.phi, self.domain = k, f, phi, domain

    def __call__(self, x):
        return self.k * np.asarray(self.f(x), dtype=float) + np.asarray(self.phi(x), dtype=float)


def linear_comparative_solve(k, phi, domain, t0, f0, tol=Tolerance(), window=None, grid_size=201) -> SystemVerdict:
    """Solve f' = k f + phi from f(t0) = f0 by fixed-step RK4, then test
    whether f is (k f + phi)-convex and k f + phi is non-decreasing."""
    lo, hi, _ = sampling_range(domain, window, tol)
    if not lo < t0 < hi:
        raise ValueError(f"t0={t0} must be interior to [{lo}, {hi}]")
    k = float(k)
    t, y, steps, local = _solve_ode(k, phi, lo, hi, float(t0), float(f0))
    dy = k * y + np.asarray(phi(t), dtype=float)
    dom = Interval(lo, hi, True, True)
    f = SampledSolution(t, y, dy, dom)
    slope = _LinearSlope(k, f, phi, dom)
    grid = make_grid(dom, grid_size, 64, None, tol)
    convex = gconvex_check(f, slope, grid, tol)
    mono = check_monotone(slope, grid, tol)
    notes = []
    if not mono.passed:
        notes.append("k f + phi is not non-decreasing")
    if not convex.passed:
        notes.append("f is not (k f + phi)-convex")
    witnesses = convex.witnesses + [dict(w, condition="monotone") for w in mono.witnesses]
    return SystemVerdict(
        system="linear",
        passed=convex.passed and mono.passed,
        witnesses=witnesses,
        fitted_params={"k": k, "t0": float(t0), "f0": float(f0)},
        notes=notes,
        details={"steps": steps, "max_local_error": local, "window": [lo, hi], "feasible": convex.passed and mono.passed},
        solution=f,
    )


def theta_for_window(domain, lo):
    """inf of e^{2t} over the sampled part of the interval; 0 when unbounded below."""
    if not math.isfinite(domain.lo):
        return 0.0
    return math.exp(2.0 * lo)


def symmetric_convexity_check(f, g, grid, tol=Tolerance()) -> SystemVerdict:
    """f is g-convex and g is f-convex; fit both against e^t and e^-t."""
    x = _points(grid)
    fg = gconvex_check(f, g, grid, tol)
    gf = gconvex_check(g, f, grid, tol)
    witnesses = [dict(w, condition="f_by_g") for w in fg.witnesses] + [dict(w, condition="g_by_f") for w in gf.witnesses]
    basis = np.column_stack([np.exp(x), np.exp(-x)])
    (l1, l2), res_f = _fit(basis, np.asarray(f(x), dtype=float))
    (m1, m2), res_g = _fit(basis, np.asarray(g(x), dtype=float))
    dom = getattr(f, "domain", Interval.real_line())
    lo = float(x.min()) if math.isfinite(dom.lo) else -math.inf
    theta = theta_for_window(dom, lo)
    slack = tol.bound(max(abs(l2), abs(m2)))
    c_f = l1 * theta - abs(l2) + slack
    c_g = m1 * theta - abs(m2) + slack
    passed = fg.passed and gf.passed
    return SystemVerdict(
        system="symmetric",
        passed=passed,
        witnesses=witnesses,
        fitted_params={"lambda1": float(l1), "lambda2": float(l2), "mu1": float(m1), "mu2": float(m2), "theta": theta},
        details={
            "fit_residual_f": res_f,
            "fit_residual_g": res_g,
            "constraint_f": bool(c_f >= 0),
            "constraint_g": bool(c_g >= 0),
            "constraint_margin_f": float(c_f),
            "constraint_margin_g": float(c_g),
        },
    )


def convex_concave_check(f, g, h, grid, tol=Tolerance()) -> SystemVerdict:
    """f is g-convex and h-concave; fit f against a t + b and g, h against a."""
    x = _points(grid)
    convex = gconvex_check(f, g, grid, tol)
    fx = np.asarray(f(x), dtype=float)
    hx = np.asarray(h(x), dtype=float)
    # f(x_i) <= f(x_j) + h(x_j)(x_i - x_j)
    term = hx[None, :] * (x[:, None] - x[None, :])
    rhs = fx[None, :] + term
    lhs = np.broadcast_to(fx[:, None], rhs.shape)
    margin = rhs - lhs + _pair_slack(tol, lhs, rhs, term)
    xi, yj = np.meshgrid(x, x, indexing="ij")
    concave_w = worst_cases(margin, {"x": xi, "y": yj, "lhs": lhs, "rhs": rhs})
    witnesses = [dict(w, condition="convex") for w in convex.witnesses] + [dict(w, condition="concave") for w in concave_w]
    concave_ok = not concave_w
    (a, b), res = _fit(np.column_stack([x, np.ones_like(x)]), fx)
    gx = np.asarray(g(x), dtype=float)
    return SystemVerdict(
        system="convex_concave",
        passed=convex.passed and concave_ok,
        witnesses=witnesses,
        fitted_params={"a": float(a), "b": float(b)},
        details={
            "convex": convex.verdict,
            "concave": "pass" if concave_ok else "fail",
            "sup_distance_f": res,
            "sup_distance_g": _sup(gx - a),
            "sup_distance_h": _sup(hx - a),
        },
    )
