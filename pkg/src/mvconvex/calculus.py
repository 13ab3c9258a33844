"""Numerical primitives shared by the checkers.

Everything here evaluates functions only through ``f(points)`` with numpy
arrays, so expression-backed and constructed functions are interchangeable.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .fnexpr import Interval
from .report import CheckReport, worst_cases

EPS = np.finfo(float).eps
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

DEFAULT_WINDOW = (-10.0, 10.0)


class NumericalBreakdown(ArithmeticError):
    """Integration, inversion or ODE budget exhausted or overflowed."""


class IntegrationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Tolerance:
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    strict_margin: float = 1e-7

    def __post_init__(self):
        vals = (self.abs_tol, self.rel_tol, self.strict_margin)
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ValueError("tolerances must be finite and non-negative")
        if not any(vals):
            raise ValueError("at least one tolerance must be positive")

    def bound(self, scale=0.0):
        """Absolute slack for a comparison between quantities of size *scale*."""
        return self.abs_tol + self.rel_tol * np.abs(scale)

    def to_dict(self):
        return {
            "abs_tol": self.abs_tol,
            "rel_tol": self.rel_tol,
            "strict_margin": self.strict_margin,
        }


@dataclass(frozen=True)
class Grid:
    points: np.ndarray
    source_interval: Interval
    window: tuple = None
    n_uniform: int = 0
    extra_points: tuple = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 3:
            raise ValueError("a grid needs at least 3 points")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")
        if not self.source_interval.contains(pts).all():
            raise ValueError("grid points must lie in the source interval")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.window is None:
            object.__setattr__(self, "window", (float(pts[0]), float(pts[-1])))

    def __len__(self):
        return self.points.size

    def __iter__(self):
        return iter(self.points.tolist())

    def to_dict(self):
        return {
            "interval": self.source_interval.to_dict(),
            "window": list(self.window),
            "size": len(self),
            "n_uniform": self.n_uniform,
            "extra_points": list(self.extra_points),
        }


def sampling_range(interval, window=None, tol=Tolerance()):
    """Closed range [a, b] actually sampled, plus the reported window.

    Unbounded intervals are truncated to *window* (default [-10, 10]); open
    endpoints that survive the truncation are pulled inward by
    ``max(abs_tol, rel_tol * (b - a))``.
    """
    wlo, whi = window if window is not None else DEFAULT_WINDOW
    if window is None and interval.bounded:
        wlo, whi = interval.lo, interval.hi
    a, b = max(wlo, interval.lo), min(whi, interval.hi)
    if not a < b:
        raise ValueError(f"window {wlo, whi} does not meet interval {interval}")
    shrink = max(tol.abs_tol, tol.rel_tol * (b - a))
    lo, hi = a, b
    if a == interval.lo and not interval.lo_closed:
        lo = a + shrink
    if b == interval.hi and not interval.hi_closed:
        hi = b - shrink
    return lo, hi, (a, b)


def kronecker_points(n, seed=0):
    """Deterministic low-discrepancy points in (0, 1): frac(seed/7 + k * golden)."""
    k = np.arange(1, n + 1, dtype=float)
    return np.mod(0.5 + seed / 7.0 + k * GOLDEN, 1.0)


def make_grid(interval, n=201, n_extra=64, window=None, tol=Tolerance(), seed=0):
    """Uniform grid plus seeded low-discrepancy points over the sampled range."""
    if n < 3:
        raise ValueError("grid size must be at least 3")
    lo, hi, win = sampling_range(interval, window, tol)
    i = np.arange(n, dtype=float)
    uniform = np.clip((lo * (n - 1 - i) + hi * i) / (n - 1), lo, hi)
    uniform[[0, -1]] = lo, hi
    extra = lo + (hi - lo) * kronecker_points(n_extra, seed) if n_extra else np.empty(0)
    extra = extra[(extra > lo) & (extra < hi)]
    points = np.unique(np.concatenate([uniform, extra]))
    return Grid(points, interval, win, n, tuple(float(e) for e in extra))


def grid_from_points(points, interval=None):
    pts = np.unique(np.asarray(points, dtype=float))
    if interval is None:
        interval = Interval.closed(pts[0], pts[-1])
    return Grid(pts, interval)


@dataclass(frozen=True)
class SidedValue:
    point: float
    side: str
    value: float
    est_error: float


def _side_sign(side):
    if side in ("right", "+", 1):
        return 1.0
    if side in ("left", "-", -1):
        return -1.0
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def difference_quotient(f, x, y):
    """Slope of the chord of *f* between *x* and *y* (symmetric in x, y)."""
    if x == y:
        raise ValueError("difference quotient of a degenerate pair x == y")
    if x > y:
        x, y = y, x
    fx, fy = f(np.array([x, y]))
    return (fy - fx) / (y - x)


def _room(domain, xs, s):
    """Distance from each point to the domain boundary on side *s*."""
    edge = domain.hi if s > 0 else domain.lo
    if not math.isfinite(edge):
        return np.full(xs.shape, np.inf)
    return np.abs(edge - xs)


def _base_steps(f, xs, s, factor, room=None, rel=1e-5):
    # powers of two keep x + h exact for dyadic x
    h0 = np.exp2(np.floor(np.log2(np.maximum(rel, rel * np.abs(xs)))))
    domain = getattr(f, "domain", None)
    if domain is not None:
        h0 = np.minimum(h0, _room(domain, xs, s) / factor)
    if room is not None:
        h0 = np.minimum(h0, np.asarray(room, dtype=float) / factor)
    return h0


def one_sided_derivatives(f, xs, side, levels=7, room=None):
    """Vectorized one-sided derivatives with error estimates.

    Second-order one-sided differences at steps ``h0 / 2**i`` combined in a
    Richardson table; the entry with the smallest neighbouring difference
    is returned together with that difference as its error estimate.
    Points without room on the requested side yield NaN. *room*, if given,
    further caps the stencil extent per point (e.g. to stay off a kink).
    """
    s = _side_sign(side)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    # x + 2h must stay strictly inside the domain
    h0 = _base_steps(f, xs, s, 2.5, room)
    ok = h0 > 0
    values = np.full(xs.shape, np.nan)
    errors = np.full(xs.shape, np.inf)
    if not ok.any():
        return values, errors
    x = xs[ok]
    h = h0[ok]
    f0 = f(x)
    table = []
    noise = []
    for i in range(levels):
        hi = h / 2.0**i
        x1 = x + s * hi
        step = x1 - x
        x2 = x + 2.0 * step
        hi = np.abs(step)
        f1 = f(x1)
        f2 = f(x2)
        table.append([s * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * hi)])
        noise.append(EPS * (3.0 * np.abs(f0) + 4.0 * np.abs(f1) + np.abs(f2)) / hi)
    for i in range(1, levels):
        for j in range(1, i + 1):
            prev = table[i][j - 1]
            table[i].append(prev + (prev - table[i - 1][j - 1]) / (2.0 ** (j + 1) - 1.0))
    # rounding in a Richardson entry grows roughly like the finest level's
    # noise times the column amplification
    best = table[0][0].copy()
    best_err = np.full(x.shape, np.inf)
    for i in range(1, levels):
        amp = 1.0
        for j in range(0, i + 1):
            cand = table[i][j]
            if j == 0:
                err = np.abs(cand - table[i - 1][0])
            else:
                amp *= (2.0 ** (j + 1) + 1.0) / (2.0 ** (j + 1) - 1.0)
                err = np.maximum(np.abs(cand - table[i][j - 1]), np.abs(cand - table[i - 1][j - 1]))
            err = np.maximum(err, amp * noise[i])
            better = err < best_err
            best = np.where(better, cand, best)
            best_err = np.where(better, err, best_err)
    values[ok] = best
    errors[ok] = best_err
    return values, errors


def one_sided_derivative(f, x, side) -> SidedValue:
    value, err = one_sided_derivatives(f, [x], side)
    return SidedValue(float(x), "right" if _side_sign(side) > 0 else "left", float(value[0]), float(err[0]))


def one_sided_limits(g, xs, side, terms=9):
    """Vectorized one-sided limits of *g* along ``x ± h0 * 4**-k``, k = 0..8.

    Aitken's delta-squared process accelerates the sequence; for a sequence
    that is eventually constant (piecewise-constant *g*) it returns the
    constant exactly. Ties in stability go to the term nearest the point.
    """
    s = _side_sign(side)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    h0 = _base_steps(g, xs, s, 1.0, rel=1e-3)
    # stay strictly inside an open or closed boundary
    h0 = np.where(np.isfinite(h0), h0 * 0.5, h0)
    ok = h0 > 0
    values = np.full(xs.shape, np.nan)
    errors = np.full(xs.shape, np.inf)
    if not ok.any():
        return values, errors
    x = xs[ok]
    seq = np.stack([g(x + s * h0[ok] * 4.0**-k) for k in range(terms)])
    d1 = np.diff(seq, axis=0)
    d2 = d1[1:] - d1[:-1]
    scale = np.maximum(np.abs(seq[2:]), 1.0)
    with np.errstate(all="ignore"):
        accel = seq[:-2] - d1[:-1] ** 2 / d2
    tiny = np.abs(d2) <= 64 * EPS * scale
    accel = np.where(tiny | ~np.isfinite(accel), seq[2:], accel)
    # late terms can be dominated by rounding in g, so take the accelerated
    # entry that moved least from its predecessor
    moves = np.abs(np.diff(accel, axis=0))
    moves = np.where(np.isfinite(moves), moves, np.inf)
    k = np.argmin(moves[::-1], axis=0)
    k = moves.shape[0] - 1 - k
    cols = np.arange(x.size)
    values[ok] = accel[k + 1, cols]
    errors[ok] = moves[k, cols]
    return values, errors


def one_sided_limit(g, x, side) -> SidedValue:
    value, err = one_sided_limits(g, [x], side)
    return SidedValue(float(x), "right" if _side_sign(side) > 0 else "left", float(value[0]), float(err[0]))


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error_bound: float
    converged: bool
    n_points: int


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
ROUGH_RATIO = 32.0


def _gl8(g, left, right):
    """8-point Gauss-Legendre on each cell; returns integrals and node values."""
    half = 0.5 * (right - left)
    pts = (0.5 * (left + right))[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = np.asarray(g(pts.ravel()), dtype=float).reshape(pts.shape)
    return (vals @ _GL_WEIGHTS) * half, vals


def _edge_values(g, pts, ends):
    """g at cell edges; an outer end where g fails takes the nearest node value."""
    out = np.full(pts.shape, np.nan)
    inner = (pts != ends[0]) & (pts != ends[1])
    if inner.any():
        out[inner] = g(pts[inner])
    for end in ends:
        hit = pts == end
        if hit.any():
            try:
                out[hit] = g(end)
            except ArithmeticError:
                pass
    return out


def _cells(g, left, right, ends):
    mid = 0.5 * (left + right)
    whole, _ = _gl8(g, left, right)
    lo, lv = _gl8(g, left, mid)
    hi, hv = _gl8(g, mid, right)
    el = _edge_values(g, left, ends)[:, None]
    em = np.asarray(g(mid), dtype=float)[:, None]
    er = _edge_values(g, right, ends)[:, None]
    el = np.where(np.isnan(el), lv[:, :1], el)
    er = np.where(np.isnan(er), hv[:, -1:], er)
    vals = np.concatenate([el, lv, em, hv, er], axis=1)
    steps = np.abs(np.diff(vals, axis=1))
    # a monotone integrand with a jump (or near-vertical stretch) shows one
    # gap far above the typical one; those cells get the bracket bound
    rough = steps.max(axis=1) > ROUGH_RATIO * np.median(steps, axis=1) + 1e-300
    bracket = (vals.max(axis=1) - vals.min(axis=1)) * (right - left)
    value = lo + hi
    err = np.where(rough, np.maximum(bracket, np.abs(whole - value)), np.abs(whole - value))
    return value, err


def adaptive_cells(g, edges, tol=Tolerance(), max_points=2**22, offset=None):
    """Refine the cells between sorted *edges* until their summed error fits.

    Each cell is integrated by 8-point Gauss-Legendre on its two halves. A
    smooth cell's error estimate is the change from the single-cell rule; a
    cell whose node values reveal a jump uses the monotone bracket (value
    spread times width) instead. Cells over their length-proportional share
    of the tolerance are bisected until the summed estimate meets
    ``tol.bound(scale)``. The scale is ``|offset| + sum |cell integrals|``
    when an *offset* (a value the integral gets added to) is given, and
    the magnitude of the total otherwise. The
    outer edges are evaluated only when g is defined there.

    Returns ``(left, right, value, err, converged, n_points)`` with cells
    sorted by their left edge.
    """
    edges = np.asarray(edges, dtype=float)
    left, right = edges[:-1], edges[1:]
    ends = (float(edges[0]), float(edges[-1]))
    length = ends[1] - ends[0]
    value, err = _cells(g, left, right, ends)
    used = 27 * left.size
    while True:
        if offset is not None:
            scale = abs(offset) + float(np.sum(np.abs(value)))
        else:
            scale = abs(float(np.sum(value)))
        target = float(tol.bound(scale))
        if float(np.sum(err)) <= target:
            return left, right, value, err, True, used
        width = right - left
        splittable = width > 8 * EPS * np.maximum(np.abs(left), np.abs(right)) + 1e-300
        split = splittable & (err > 0.5 * target * width / length)
        if not split.any():
            split = splittable & (err >= err.max())
        n_new = 2 * int(split.sum())
        if not split.any() or used + 27 * n_new > max_points:
            return left, right, value, err, False, used
        sl, sr = left[split], right[split]
        sm = 0.5 * (sl + sr)
        child_left = np.concatenate([sl, sm])
        child_right = np.concatenate([sm, sr])
        child_value, child_err = _cells(g, child_left, child_right, ends)
        used += 27 * n_new
        keep = ~split
        left = np.concatenate([left[keep], child_left])
        right = np.concatenate([right[keep], child_right])
        value = np.concatenate([value[keep], child_value])
        err = np.concatenate([err[keep], child_err])
        order = np.argsort(left, kind="stable")
        left, right, value, err = left[order], right[order], value[order], err[order]


def integrate_monotone_detail(g, a, b, tol=Tolerance(), max_points=2**22):
    """Signed integral of a monotone (possibly jumping) integrand over [a, b].

    Adaptive refinement from 64 equal cells (see :func:`adaptive_cells`), so
    a jump costs a few dozen bisections of one cell rather than a global
    refinement.
    """
    a, b = float(a), float(b)
    if a == b:
        return QuadratureResult(0.0, 0.0, True, 0)
    sign = 1.0
    if a > b:
        a, b, sign = b, a, -1.0
    edges = a + (b - a) * np.arange(65) / 64.0
    edges[-1] = b
    _, _, value, err, converged, used = adaptive_cells(g, edges, tol, max_points)
    return QuadratureResult(sign * float(np.sum(value)), float(np.sum(err)), converged, used)


def integrate_monotone(g, a, b, tol=Tolerance()):
    """Signed integral of a monotone integrand from *a* to *b*."""
    res = integrate_monotone_detail(g, a, b, tol)
    if not res.converged:
        warnings.warn(
            f"integration budget exhausted; achieved error bound {res.error_bound:.3g}",
            IntegrationWarning,
            stacklevel=2,
        )
    return res.value


def _pair_slack(tol, *values):
    scale = np.abs(np.asarray(values[0], dtype=float))
    for v in values[1:]:
        scale = np.maximum(scale, np.abs(v))
    return tol.bound(scale) + 16 * EPS * scale


def check_monotone(g, grid, tol=Tolerance(), decreasing=False):
    """Non-decreasing (or non-increasing) on the grid, up to slack.

    Strict monotonicity is reported in ``details`` but never required.
    """
    x = np.asarray(getattr(grid, "points", grid), dtype=float)
    v = np.asarray(g(x), dtype=float)
    if decreasing:
        v = -v
    # margin[i, j] = v[j] - v[i] + slack for i < j
    margin = v[None, :] - v[:, None] + _pair_slack(tol, v[None, :], v[:, None])
    iu = np.triu_indices(x.size, 1)
    m = margin[iu]
    xi, xj = x[iu[0]], x[iu[1]]
    witnesses = worst_cases(m, {"x": xi, "y": xj})
    for w in witnesses:
        w["g_x"], w["g_y"] = float(g(w["x"])), float(g(w["y"]))
    strict = bool(np.all(np.diff(v) > tol.strict_margin))
    return CheckReport(
        name="monotone_decreasing" if decreasing else "monotone_increasing",
        passed=not witnesses,
        checked=int(m.size),
        worst_margin=float(m.min()),
        witnesses=witnesses,
        details={"strict": strict},
    )


def chord_slopes(fx, x):
    """Matrix of difference quotients DQ[i, j] for grid values (NaN on diagonal)."""
    dx = x[None, :] - x[:, None]
    with np.errstate(all="ignore"):
        dq = (fx[None, :] - fx[:, None]) / dx
    np.fill_diagonal(dq, np.nan)
    return dq


def dq_roundoff(fx, x):
    """Rounding error scale of each difference quotient."""
    dx = np.abs(x[None, :] - x[:, None])
    with np.errstate(all="ignore"):
        r = 8 * EPS * (np.abs(fx[None, :]) + np.abs(fx[:, None])) / dx
    np.fill_diagonal(r, 0.0)
    return r


def check_convex(f, grid, tol=Tolerance()):
    """Chord slopes increase: DQ(x, y) <= DQ(y, z) for all x < y < z.

    Reduced per middle point y to the steepest left chord against the
    flattest right chord, which is the worst triple through y.
    """
    x = np.asarray(getattr(grid, "points", grid), dtype=float)
    fx = np.asarray(f(x), dtype=float)
    n = x.size
    dq = chord_slopes(fx, x)
    rnd = dq_roundoff(fx, x)
    margins = np.full(n, np.inf)
    left_idx = np.zeros(n, dtype=int)
    right_idx = np.zeros(n, dtype=int)
    for j in range(1, n - 1):
        left = dq[:j, j]
        right = dq[j, j + 1 :]
        i = int(np.argmax(left))
        k = int(np.argmin(right)) + j + 1
        slack = tol.bound(max(abs(dq[i, j]), abs(dq[j, k]))) + rnd[i, j] + rnd[j, k]
        margins[j] = dq[j, k] - dq[i, j] + slack
        left_idx[j], right_idx[j] = i, k
    mid = np.arange(1, n - 1)
    m = margins[mid]
    witnesses = worst_cases(
        m,
        {"x": x[left_idx[mid]], "y": x[mid], "z": x[right_idx[mid]]},
    )
    return CheckReport(
        name="convex",
        passed=not witnesses,
        checked=int(n * (n - 1) * (n - 2) // 6),
        worst_margin=float(m.min()),
        witnesses=witnesses,
    )
