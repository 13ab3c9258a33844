"""Comparative (g-) convexity: certification, construction and slope families.

f is g-convex on I when f(x) >= f(y) + g(y) (x - y) for all x, y in I, i.e.
every point has a supporting line of slope g(y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calculus import (
    NumericalBreakdown,
    Tolerance,
    _gl8,
    _pair_slack,
    adaptive_cells,
    chord_slopes,
    check_convex,
    check_monotone,
    dq_roundoff,
    make_grid,
    one_sided_derivatives,
    one_sided_limits,
    sampling_range,
)
from .fnexpr import DomainError, Interval
from .report import CheckReport, worst_cases

CONDITIONS = ("support", "two_sided", "blend_x", "quotient", "blend_y", "chain")
DEFAULT_LAMBDAS = (0.0, 0.25, 0.5, 0.75, 1.0)
MESH_POINTS = 4097


@dataclass
class GConvexReport:
    passed: bool
    per_condition: dict
    witnesses: list = field(default_factory=list)
    worst_margin: float | None = None
    consistency_alarm: bool = False
    notes: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.passed

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "per_condition": {k: ("pass" if v else "fail") for k, v in self.per_condition.items()},
            "witnesses": self.witnesses,
            "worst_margin": self.worst_margin,
            "consistency_alarm": self.consistency_alarm,
            "notes": self.notes,
            "details": self.details,
        }


@dataclass(frozen=True)
class LambdaBlend:
    """Weight function lambda(x) in [0, 1] for blending one-sided derivatives."""

    lambda_fn: object

    def __call__(self, x):
        v = np.asarray(self.lambda_fn(x), dtype=float)
        if np.any((v < 0) | (v > 1)):
            raise ValueError("blend weights must lie in [0, 1]")
        return v

    @classmethod
    def constant(cls, value):
        value = float(value)
        if not 0.0 <= value <= 1.0:
            raise ValueError("blend weights must lie in [0, 1]")
        return cls(lambda x: np.full(np.shape(x), value) if np.ndim(x) else value)


@dataclass(frozen=True)
class DQBSpec:
    """A convex base function with finitely many exceptional slope values.

    Each ``(c_n, d_n)`` must satisfy ``f'_-(c_n) <= d_n <= f'_+(c_n)``;
    use :meth:`validate` to check this numerically.
    """

    base: object
    exceptions: tuple = ()

    def __post_init__(self):
        cs = [c for c, _ in self.exceptions]
        if any(b <= a for a, b in zip(cs, cs[1:])):
            raise ValueError("exception points must be strictly increasing")

    def validate(self, tol=Tolerance()):
        if not self.exceptions:
            return True
        cs = np.array([c for c, _ in self.exceptions], dtype=float)
        ds = np.array([d for _, d in self.exceptions], dtype=float)
        lo, el = one_sided_derivatives(self.base, cs, "left")
        hi, er = one_sided_derivatives(self.base, cs, "right")
        ok = (ds >= lo - tol.bound(lo) - el) & (ds <= hi + tol.bound(hi) + er)
        return bool(ok.all())

    def slope_function(self):
        """The difference quotient bound: f' off the exceptions, d_n on them."""
        return _ExceptionSlope(self.base, tuple(self.exceptions))


class _ExceptionSlope:
    def __init__(self, base, exceptions):
        self.base = base
        self.exceptions = exceptions
        self.domain = base.domain

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        flat = np.atleast_1d(arr).ravel()
        dl, _ = one_sided_derivatives(self.base, flat, "left")
        dr, _ = one_sided_derivatives(self.base, flat, "right")
        out = np.where(np.isnan(dl), dr, np.where(np.isnan(dr), dl, 0.5 * (dl + dr)))
        for c, d in self.exceptions:
            out[flat == c] = d
        return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def _points(grid):
    return np.asarray(getattr(grid, "points", grid), dtype=float)


def _support_margins(f, g, x, fx, gx):
    """margin[i, j] for f(x_i) >= f(x_j) + g(x_j)(x_i - x_j), after slack."""
    rhs = fx[None, :] + gx[None, :] * (x[:, None] - x[None, :])
    lhs = np.broadcast_to(fx[:, None], rhs.shape)
    return lhs, rhs


_slack = _pair_slack


def gconvex_check(f, g, grid, tol=Tolerance()) -> GConvexReport:
    """Supporting-line inequality over all ordered grid pairs."""
    x = _points(grid)
    fx = np.asarray(f(x), dtype=float)
    gx = np.asarray(g(x), dtype=float)
    lhs, rhs = _support_margins(f, g, x, fx, gx)
    term = gx[None, :] * (x[:, None] - x[None, :])
    margin = lhs - rhs + _slack(tol, lhs, rhs, term)
    xi, yj = np.meshgrid(x, x, indexing="ij")
    witnesses = worst_cases(margin, {"x": xi, "y": yj, "lhs": lhs, "rhs": rhs})
    for w in witnesses:
        w["lambda"] = None
    passed = not witnesses
    return GConvexReport(
        passed=passed,
        per_condition={"support": passed},
        witnesses=witnesses,
        worst_margin=float(margin.min()),
        details={"pairs": int(x.size**2)},
    )


def _blend_margins(f, g, x, fx, gx, lam, tol, form):
    """Margins of the blended-point inequalities for one weight lam.

    form 'blend_x': f(lam x + (1-lam) y) <= f(y) + lam g(x) (x - y)
    form 'blend_y': f(lam x + (1-lam) y) <= f(x) + (1-lam) g(y) (y - x)
    """
    X = x[:, None]
    Y = x[None, :]
    blend = lam * X + (1.0 - lam) * Y
    # keep the blended point inside the sampled hull
    blend = np.clip(blend, np.minimum(X, Y), np.maximum(X, Y))
    fb = np.asarray(f(blend.ravel()), dtype=float).reshape(blend.shape)
    if form == "blend_x":
        term = lam * gx[:, None] * (X - Y)
        rhs = fx[None, :] + term
    else:
        term = (1.0 - lam) * gx[None, :] * (Y - X)
        rhs = fx[:, None] + term
    margin = rhs - fb + _slack(tol, rhs, fb, term)
    return margin, fb, rhs


def _chain_margins(x, fx, gx, tol):
    """Worst link of g(x) <= DQ(x,y) <= g(y) <= DQ(y,z) <= g(z) per middle y."""
    n = x.size
    dq = chord_slopes(fx, x)
    rnd = dq_roundoff(fx, x)
    rows = []
    for j in range(1, n - 1):
        left = dq[:j, j]
        right = dq[j, j + 1 :]
        gl = gx[:j]
        gr = gx[j + 1 :]
        gy = gx[j]
        sl = _slack(tol, left, gl) + rnd[:j, j]
        sr = _slack(tol, right, gr) + rnd[j, j + 1 :]
        links_left = np.minimum(left - gl, gy - left) + np.minimum(sl, _slack(tol, left, gy) + rnd[:j, j])
        links_right = np.minimum(right - gy, gr - right) + np.minimum(sr, _slack(tol, right, gy) + rnd[j, j + 1 :])
        i = int(np.argmin(links_left))
        k = int(np.argmin(links_right))
        convex_link = right.min() - left.max() + tol.bound(max(abs(right.min()), abs(left.max()))) + rnd[:j, j].max() + rnd[j, j + 1 :].max()
        m = min(links_left[i], links_right[k], convex_link)
        rows.append((m, x[i], x[j], x[j + 1 + k]))
    if not rows:
        return np.array([np.inf]), np.array([np.nan]), np.array([np.nan]), np.array([np.nan])
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def equivalence_suite(f, g, grid, lambdas=DEFAULT_LAMBDAS, tol=Tolerance()) -> GConvexReport:
    """Evaluate every equivalent form of g-convexity on the grid.

    The forms are mathematically equivalent, so their verdicts should
    coincide; a disagreement raises ``consistency_alarm``. A verdict over
    the open weights 0 < lam < 1 alone is reported in ``details`` as well.
    """
    x = _points(grid)
    fx = np.asarray(f(x), dtype=float)
    gx = np.asarray(g(x), dtype=float)
    lambdas = tuple(float(v) for v in lambdas)
    if any(not 0.0 <= v <= 1.0 for v in lambdas):
        raise ValueError("lambdas must lie in [0, 1]")
    xi, yj = np.meshgrid(x, x, indexing="ij")
    per = {}
    witnesses = []
    worst = math.inf

    def record(cid, margin, cols, lam=None):
        nonlocal worst
        per[cid] = bool(np.all(margin >= 0))
        worst = min(worst, float(np.min(margin)))
        for w in worst_cases(margin, cols, limit=5):
            w["condition"] = cid
            w["lambda"] = lam
            witnesses.append(w)

    # supporting line
    lhs, rhs = _support_margins(f, g, x, fx, gx)
    term = gx[None, :] * (x[:, None] - x[None, :])
    record("support", lhs - rhs + _slack(tol, lhs, rhs, term), {"x": xi, "y": yj, "lhs": lhs, "rhs": rhs})

    # two-sided bound g(x)(y-x) <= f(y)-f(x) <= g(y)(y-x)
    diff = fx[None, :] - fx[:, None]
    low = gx[:, None] * (yj - xi)
    high = gx[None, :] * (yj - xi)
    m32 = np.minimum(diff - low + _slack(tol, diff, low, fx[None, :]), high - diff + _slack(tol, diff, high, fx[None, :]))
    record("two_sided", m32, {"x": xi, "y": yj, "lhs": low, "rhs": high})

    # blended-point forms, all weights and the open-weight restriction
    open_ok = {"blend_x": True, "blend_y": True}
    for form in ("blend_x", "blend_y"):
        margins = []
        for lam in lambdas:
            m, fb, r = _blend_margins(f, g, x, fx, gx, lam, tol, form)
            margins.append(m)
            if 0.0 < lam < 1.0 and np.any(m < 0):
                open_ok[form] = False
            for w in worst_cases(m, {"x": xi, "y": yj, "lhs": fb, "rhs": r}, limit=2):
                w["condition"] = form
                w["lambda"] = lam
                witnesses.append(w)
        stacked = np.stack(margins)
        per[form] = bool(np.all(stacked >= 0))
        worst = min(worst, float(stacked.min()))

    # quotient sandwich for x < y
    iu = np.triu_indices(x.size, 1)
    a, b = x[iu[0]], x[iu[1]]
    dq = (fx[iu[1]] - fx[iu[0]]) / (b - a)
    rnd = dq_roundoff(fx, x)[iu]
    ga, gb = gx[iu[0]], gx[iu[1]]
    m34 = np.minimum(dq - ga + _slack(tol, dq, ga) + rnd, gb - dq + _slack(tol, dq, gb) + rnd)
    record("quotient", m34, {"x": a, "y": b, "lhs": ga, "rhs": gb})

    cm, cx, cy, cz = _chain_margins(x, fx, gx, tol)
    per["chain"] = bool(np.all(cm >= 0))
    worst = min(worst, float(cm.min()))
    for w in worst_cases(cm, {"x": cx, "y": cy, "z": cz}, limit=5):
        w["condition"] = "chain"
        w["lambda"] = None
        witnesses.append(w)

    verdicts = set(per.values())
    alarm = len(verdicts) > 1
    notes = []
    if alarm:
        notes.append("equivalent conditions disagree: " + ", ".join(f"{k}={'pass' if v else 'fail'}" for k, v in per.items()))
    witnesses.sort(key=lambda w: (w["margin"], w["x"], w["y"]))
    return GConvexReport(
        passed=all(per.values()),
        per_condition=per,
        witnesses=witnesses[:40],
        worst_margin=worst,
        consistency_alarm=alarm,
        notes=notes,
        details={
            "lambdas": list(lambdas),
            "open_lambda_verdict": {k: ("pass" if v else "fail") for k, v in open_ok.items()},
        },
    )


def _derivative_bounds(f, x):
    dl, el = one_sided_derivatives(f, x, "left")
    dr, er = one_sided_derivatives(f, x, "right")
    return dl, el, dr, er


def bounds_certificate(f, g, grid, tol=Tolerance()) -> CheckReport:
    """Convexity of f plus f'_- <= g <= f'_+ and g(x-) = f'_-(x), g(x+) = f'_+(x).

    Sides without room inside the domain (closed endpoints) are skipped.
    """
    x = _points(grid)
    convex = check_convex(f, grid, tol)
    gx = np.asarray(g(x), dtype=float)
    dl, el, dr, er = _derivative_bounds(f, x)
    ll, lle = one_sided_limits(g, x, "left")
    lr, lre = one_sided_limits(g, x, "right")
    k = 4.0
    has_l = np.isfinite(dl)
    has_r = np.isfinite(dr)
    # g may itself be built from numerical derivatives, so charge both errors
    both = np.where(np.isfinite(el), el, 0.0) + np.where(np.isfinite(er), er, 0.0)
    s_l = tol.bound(np.maximum(np.abs(dl), np.abs(gx))) + k * both
    s_r = tol.bound(np.maximum(np.abs(dr), np.abs(gx))) + k * both
    m_lower = np.where(has_l, gx - dl + s_l, np.inf)
    m_upper = np.where(has_r, dr - gx + s_r, np.inf)
    has_ll = has_l & np.isfinite(ll)
    has_lr = has_r & np.isfinite(lr)
    m_lim_l = np.where(has_ll, tol.bound(np.maximum(np.abs(ll), np.abs(dl))) + k * (el + lle) - np.abs(ll - dl), np.inf)
    m_lim_r = np.where(has_lr, tol.bound(np.maximum(np.abs(lr), np.abs(dr))) + k * (er + lre) - np.abs(lr - dr), np.inf)
    margin = np.minimum.reduce([m_lower, m_upper, m_lim_l, m_lim_r])
    witnesses = worst_cases(
        margin,
        {"x": x, "g": gx, "left_derivative": dl, "right_derivative": dr, "g_left_limit": ll, "g_right_limit": lr},
    )
    for w in witnesses:
        i = int(np.flatnonzero(x == w["x"])[0])
        w["failed"] = [
            name
            for name, arr in (("lower", m_lower), ("upper", m_upper), ("left_limit", m_lim_l), ("right_limit", m_lim_r))
            if arr[i] < 0
        ]
    passed = convex.passed and bool(np.all(margin >= 0))
    notes = [] if convex.passed else ["f is not convex on the grid"]
    return CheckReport(
        name="bounds_certificate",
        passed=passed,
        checked=int(x.size),
        worst_margin=float(min(margin.min(), convex.worst_margin if convex.worst_margin is not None else np.inf)),
        witnesses=convex.witnesses + witnesses if not convex.passed else witnesses,
        notes=notes,
        details={"convex": convex.verdict},
    )


class ConstructedFunction:
    """An antiderivative tabulated on a mesh, F(x) = F(c) + integral of g from c.

    The mesh is refined adaptively around jumps and steep stretches of g,
    so on every cell 8-point Gauss-Legendre is accurate to the cell's share
    of the error. An off-mesh point is the value at the mesh point to its
    left plus the same rule over the remainder.
    """

    def __init__(self, integrand, mesh, values, domain, error_estimate):
        self.integrand = integrand
        self.mesh = mesh
        self.values = values
        self.domain = domain
        self.error_estimate = error_estimate

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        flat = np.atleast_1d(arr).ravel()
        outside = ~self.domain.contains(flat)
        if outside.any():
            idx = int(np.flatnonzero(outside)[0])
            raise DomainError(f"point outside domain {self.domain}", point=float(flat[idx]), index=idx)
        idx = np.clip(np.searchsorted(self.mesh, flat, side="right") - 1, 0, self.mesh.size - 2)
        left = self.mesh[idx]
        out = self.values[idx].copy()
        off = flat != left
        if off.any():
            rest, _ = _gl8(self.integrand, left[off], flat[off])
            out[off] += rest
        return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)

    def table(self):
        return self.mesh.copy(), self.values.copy()


def antiderivative(g, c, f_c, lo, hi, domain, tol=Tolerance(), mesh_points=MESH_POINTS, max_points=2**23):
    """Tabulate x -> f_c + integral_c^x g on [lo, hi] with c as a mesh point."""
    if not lo <= c <= hi:
        raise ValueError(f"anchor {c} outside [{lo}, {hi}]")
    base = np.linspace(lo, hi, mesh_points)
    # no sliver cells next to the anchor
    near = np.abs(base - c) < 0.25 * (hi - lo) / (mesh_points - 1)
    near[[0, -1]] = False
    edges = np.unique(np.concatenate([base[~near], [c]]))
    left, right, cells, errs, converged, _ = adaptive_cells(g, edges, tol, max_points, offset=f_c)
    if not np.all(np.isfinite(cells)):
        raise NumericalBreakdown("non-finite integrand values on the mesh")
    if not converged:
        raise NumericalBreakdown(f"integration budget exhausted; achieved error {float(np.sum(errs)):.3g}")
    mesh = np.append(left, right[-1])
    ci = int(np.flatnonzero(mesh == c)[0])
    values = np.empty(mesh.size)
    values[ci] = 0.0
    values[ci + 1 :] = np.cumsum(cells[ci:])
    values[:ci] = -np.cumsum(cells[:ci][::-1])[::-1]
    return ConstructedFunction(g, mesh, f_c + values, domain, float(np.sum(errs)))


def construct_from_quotient_bound(g, c, f_c, domain, tol=Tolerance(), window=None, check_grid_size=201):
    """The g-convex function with value f_c at c: x -> f_c + integral_c^x g.

    g must be non-decreasing; this is checked on a grid over the domain.
    """
    _, _, (a, b) = sampling_range(domain, window, tol)
    if not a < c < b:
        raise ValueError(f"anchor c={c} must be interior to [{a}, {b}]")
    probe = make_grid(domain, check_grid_size, 64, window, tol)
    mono = check_monotone(g, probe, tol)
    if not mono.passed:
        raise ValueError(f"quotient bound is not non-decreasing: {mono.witnesses[0]}")
    dom = Interval(a, b, a > domain.lo or domain.lo_closed, b < domain.hi or domain.hi_closed)
    return antiderivative(g, float(c), float(f_c), a, b, dom, tol)


class BlendedSlope:
    """g(x) = lam(x) f'_-(x) + (1 - lam(x)) f'_+(x), evaluated on demand.

    When built for a grid, ``samples`` holds the values on it. Kinks of f
    are then assumed to sit on grid points: stencils never leave the grid
    cell they start in, and inside an open cell f is treated as
    differentiable, with the derivative taken toward the roomier side.
    """

    def __init__(self, f, blend, grid=None):
        self.f = f
        self.blend = blend
        self.domain = f.domain
        self.points = None if grid is None else _points(grid)
        self.samples = None if grid is None else self(self.points)

    def _sided(self, flat):
        if self.points is None:
            dl, _ = one_sided_derivatives(self.f, flat, "left")
            dr, _ = one_sided_derivatives(self.f, flat, "right")
            return dl, dr
        p = self.points
        i = np.searchsorted(p, flat, side="left")
        j = np.searchsorted(p, flat, side="right")
        room_l = np.where(i > 0, flat - p[np.maximum(i - 1, 0)], np.inf)
        room_r = np.where(j < p.size, p[np.minimum(j, p.size - 1)] - flat, np.inf)
        dl, _ = one_sided_derivatives(self.f, flat, "left", room=room_l)
        dr, _ = one_sided_derivatives(self.f, flat, "right", room=room_r)
        inside = i == j
        dl, dr = np.where(inside & (room_r > room_l), dr, dl), np.where(inside & (room_l >= room_r), dl, dr)
        return dl, dr

    def __call__(self, x):
        arr = np.asarray(x, dtype=float)
        flat = np.atleast_1d(arr).ravel()
        dl, dr = self._sided(flat)
        dl = np.where(np.isnan(dl), dr, dl)
        dr = np.where(np.isnan(dr), dl, dr)
        lam = np.broadcast_to(np.asarray(self.blend(flat), dtype=float), flat.shape)
        out = lam * dl + (1.0 - lam) * dr
        return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def dqb_family(f, blend, grid, tol=Tolerance()):
    """A difference quotient bound of the convex f, blending f'_- and f'_+."""
    convex = check_convex(f, grid, tol)
    if not convex.passed:
        raise ValueError("f is not convex on the grid")
    if not isinstance(blend, LambdaBlend):
        blend = LambdaBlend(blend)
    return BlendedSlope(f, blend, grid)


def sandwich_check(f, g, grid, tol=Tolerance()) -> CheckReport:
    """a + b x <= f(x) <= a + x g(x) with a = f(0), b = g(0)."""
    if not f.domain.interior_contains(0.0):
        raise ValueError("0 must be interior to the domain of f")
    x = _points(grid)
    a = float(f(0.0))
    b = float(g(0.0))
    fx = np.asarray(f(x), dtype=float)
    gx = np.asarray(g(x), dtype=float)
    lower = a + b * x
    upper = a + x * gx
    s = _slack(tol, lower, fx, upper, x * gx)
    margin = np.minimum(fx - lower + s, upper - fx + s)
    return CheckReport(
        name="sandwich",
        passed=bool(np.all(margin >= 0)),
        checked=int(x.size),
        worst_margin=float(margin.min()),
        witnesses=worst_cases(margin, {"x": x, "lower": lower, "f": fx, "upper": upper}),
        details={"a": a, "b": b},
    )
