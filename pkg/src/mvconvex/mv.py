"""Mean-value functions: witnesses, grid checks and pointwise generators.

A function g is an MV-function of f when every chord slope of f is attained
by g somewhere strictly between the chord's endpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .calculus import (
    EPS,
    GOLDEN,
    Tolerance,
    one_sided_derivatives,
    one_sided_limits,
)
from .fnexpr import BinOp, EvalError, Interval, RealFunction, Var, num, substitute
from .report import CheckReport, worst_cases

N_PROBES = 33
N_DENSE = 1024
N_GOLDEN = 20
PAIR_BUDGET = 4096
MAX_BISECT = 200


@dataclass(frozen=True)
class MVWitness:
    x: float
    y: float
    c: float
    dq: float
    g_at_c: float


@dataclass(frozen=True)
class MeanFunctionSample:
    """A mean value ``eta`` for the pair (x, y).

    ``lam`` is the fraction of the way from x to y: ``eta = x + (y - x) * lam``.
    The complementary weight ``1 - lam`` is the coefficient of x in
    ``eta = (1 - lam) * x + lam * y``.
    """

    x: float
    y: float
    eta: float
    lam: float

    def to_dict(self):
        return {"x": self.x, "y": self.y, "eta": self.eta, "lambda": self.lam}


@dataclass(frozen=True)
class PointwiseMVSpec:
    x0: float
    mu: float

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise ValueError(f"mu must lie in (0, 1), got {self.mu}")


def witness_tolerance(tol, dq, fa=0.0, fb=0.0, width=1.0):
    """Allowed |g(c) - DQ|: the tolerance plus the rounding in DQ itself."""
    rounding = 8 * EPS * (np.abs(fa) + np.abs(fb)) / width
    return tol.bound(np.maximum(1.0, np.abs(dq))) + rounding


def _safe_eval(g, pts):
    """Evaluate g, marking failed points with NaN instead of raising."""
    flat = pts.ravel()
    try:
        return np.asarray(g(flat), dtype=float).reshape(pts.shape)
    except EvalError:
        out = np.empty(flat.shape)
        for i, p in enumerate(flat):
            try:
                out[i] = g(float(p))
            except EvalError:
                out[i] = np.nan
        return out.reshape(pts.shape)


def _band_bisect(g, a, b, dq, sign, level, upper):
    """Vectorized bisection on the monotone sign*(g - dq).

    With ``upper=False`` finds the smallest c in (a, b) where
    ``sign*(g(c) - dq) >= -level``; with ``upper=True`` the largest c where
    it is ``<= level``. Endpoints are never evaluated. Returns the located
    point, or NaN when the band is not reached.
    """
    lo = a.copy()
    hi = b.copy()
    lo_hit = np.zeros(a.shape, dtype=bool)
    hi_hit = np.zeros(a.shape, dtype=bool)
    active = np.ones(a.shape, dtype=bool)
    for _ in range(MAX_BISECT):
        mid = 0.5 * (lo + hi)
        stuck = (mid <= lo) | (mid >= hi)
        active &= ~stuck
        if not active.any():
            break
        phi = sign * (_safe_eval(g, mid) - dq)
        if upper:
            go_right = phi <= level
        else:
            go_right = ~(phi >= -level)
        go_right &= active
        go_left = active & ~go_right
        lo = np.where(go_right, mid, lo)
        lo_hit |= go_right
        hi = np.where(go_left, mid, hi)
        hi_hit |= go_left
    if upper:
        return np.where(lo_hit, lo, np.nan)
    return np.where(hi_hit, hi, np.nan)


def _crossing_bisect(g, pts, signed, k, d):
    """Bisect the sign change of g - dq nearest sample k, where there is one.

    Returns both ends of the final bracket with their gaps; rows without a
    sign change get NaN.
    """
    sgn = np.sign(signed)
    crossing = sgn[:, :-1] * sgn[:, 1:] < 0
    rows = np.arange(k.size)
    nan = np.full(k.shape, np.nan)
    has = crossing.any(axis=1)
    if not has.any():
        return nan, nan, nan, nan
    idx = np.arange(crossing.shape[1])
    dist = np.where(crossing, np.abs(idx[None, :] - k[:, None]), np.inf)
    j = np.argmin(dist, axis=1)
    r = rows[has]
    j = j[has]
    lo = pts[r, j]
    hi = pts[r, j + 1]
    s_lo = sgn[r, j]
    dd = d[has]
    for _ in range(MAX_BISECT):
        mid = 0.5 * (lo + hi)
        live = (mid > lo) & (mid < hi)
        if not live.any():
            break
        s_mid = np.sign(_safe_eval(g, mid) - dd)
        same = live & (s_mid == s_lo)
        lo = np.where(same, mid, lo)
        hi = np.where(live & ~same, mid, hi)
    out_lo, out_hi = nan.copy(), nan.copy()
    out_lo[has] = lo
    out_hi[has] = hi
    gap_lo, gap_hi = nan.copy(), nan.copy()
    gap_lo[has] = np.abs(_safe_eval(g, lo) - dd)
    gap_hi[has] = np.abs(_safe_eval(g, hi) - dd)
    return out_lo, gap_lo, out_hi, gap_hi


def _dense_search(g, a, b, dq, tolw):
    """Dense scan plus golden-section refinement of |g - dq| per pair."""
    n = a.size
    best_c = np.full(n, np.nan)
    best_gap = np.full(n, np.inf)
    chunk = max(1, 2**21 // N_DENSE)
    frac = (np.arange(N_DENSE) + 1.0) / (N_DENSE + 1.0)
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        aa, bb, d = a[sl], b[sl], dq[sl]
        pts = aa[:, None] + (bb - aa)[:, None] * frac[None, :]
        signed = _safe_eval(g, pts) - d[:, None]
        gap = np.abs(signed)
        gap = np.where(np.isnan(gap), np.inf, gap)
        k = np.argmin(gap, axis=1)
        rows = np.arange(k.size)
        c0 = pts[rows, k]
        g0 = gap[rows, k]
        # golden section on |g - dq| over the neighbouring sample cell
        left = np.where(k > 0, pts[rows, np.maximum(k - 1, 0)], aa + (pts[rows, 0] - aa) * 0.5)
        right = np.where(
            k < N_DENSE - 1,
            pts[rows, np.minimum(k + 1, N_DENSE - 1)],
            pts[rows, -1] + (bb - pts[rows, -1]) * 0.5,
        )
        u = right - GOLDEN * (right - left)
        v = left + GOLDEN * (right - left)
        gu = np.abs(_safe_eval(g, u) - d)
        gv = np.abs(_safe_eval(g, v) - d)
        for _ in range(N_GOLDEN):
            shrink_right = np.nan_to_num(gu, nan=np.inf) <= np.nan_to_num(gv, nan=np.inf)
            right = np.where(shrink_right, v, right)
            left = np.where(shrink_right, left, u)
            new_u = right - GOLDEN * (right - left)
            new_v = left + GOLDEN * (right - left)
            u_next = np.where(shrink_right, new_u, v)
            v_next = np.where(shrink_right, u, new_v)
            gu_next = np.where(shrink_right, np.abs(_safe_eval(g, new_u) - d), gv)
            gv_next = np.where(shrink_right, gu, np.abs(_safe_eval(g, new_v) - d))
            u, v, gu, gv = u_next, v_next, gu_next, gv_next
        bu, bgu, bv, bgv = _crossing_bisect(g, pts, signed, k, d)
        for cand, cg in ((u, gu), (v, gv), (bu, bgu), (bv, bgv)):
            cg = np.where(np.isnan(cg), np.inf, cg)
            better = (cg < g0) | ((cg == g0) & (cand < c0))
            c0 = np.where(better, cand, c0)
            g0 = np.where(better, cg, g0)
        best_c[sl] = c0
        best_gap[sl] = g0
    found = best_gap <= tolw
    return best_c, found


def find_witnesses(f, g, x, y, tol=Tolerance(), fx=None, fy=None):
    """Batched witness search for the pairs (x[i], y[i]).

    Returns ``(c, dq, found, tolw)`` arrays, tolw being the accepted gap. Where g looks monotone on the 33
    probe points of a pair the chord slope is located by bisection (the
    midpoint of the tolerance band, so a plateau yields its centre);
    otherwise, or if that fails, a dense scan with golden-section
    refinement is used.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x == y):
        raise ValueError("degenerate pair x == y")
    a = np.minimum(x, y)
    b = np.maximum(x, y)
    fa = f(a) if fx is None else np.where(x < y, fx, fy)
    fb = f(b) if fy is None else np.where(x < y, fy, fx)
    dq = (fb - fa) / (b - a)
    tolw = witness_tolerance(tol, dq, fa, fb, b - a)
    frac = np.arange(1, N_PROBES + 1) / (N_PROBES + 1.0)
    probes = a[:, None] + (b - a)[:, None] * frac[None, :]
    gp = _safe_eval(g, probes)
    steps = np.diff(gp, axis=1)
    finite = np.all(np.isfinite(gp), axis=1)
    inc = finite & np.all(steps >= 0, axis=1)
    dec = finite & np.all(steps <= 0, axis=1) & ~inc
    sign = np.where(dec, -1.0, 1.0)

    c = np.full(a.shape, np.nan)
    found = np.zeros(a.shape, dtype=bool)
    mono = inc | dec
    if mono.any():
        m = np.flatnonzero(mono)
        lo_edge = _band_bisect(g, a[m], b[m], dq[m], sign[m], tolw[m], upper=False)
        hi_edge = _band_bisect(g, a[m], b[m], dq[m], sign[m], tolw[m], upper=True)
        ok = np.isfinite(lo_edge) & np.isfinite(hi_edge) & (lo_edge <= hi_edge)
        cand = np.where(ok, 0.5 * (lo_edge + hi_edge), np.nan)
        gc = np.full(cand.shape, np.nan)
        if ok.any():
            gc[ok] = _safe_eval(g, cand[ok])
        good = ok & (np.abs(gc - dq[m]) <= tolw[m]) & (cand > a[m]) & (cand < b[m])
        c[m[good]] = cand[good]
        found[m[good]] = True
    rest = np.flatnonzero(~found)
    if rest.size:
        cr, fr = _dense_search(g, a[rest], b[rest], dq[rest], tolw[rest])
        c[rest] = np.where(fr, cr, np.nan)
        found[rest] = fr
        # keep the best candidate of failed pairs for reporting
        c[rest[~fr]] = cr[~fr]
    return c, dq, found, tolw


def mv_witness(f, g, x, y, tol=Tolerance()):
    """A point c strictly between x and y with g(c) equal to the chord slope.

    Returns an :class:`MVWitness`, or ``None`` when the search fails.
    """
    if x == y:
        raise ValueError("degenerate pair x == y")
    c, dq, found, _ = find_witnesses(f, g, np.array([float(x)]), np.array([float(y)]), tol)
    if not found[0]:
        return None
    return MVWitness(float(x), float(y), float(c[0]), float(dq[0]), float(g(float(c[0]))))


def select_pairs(n, budget=PAIR_BUDGET):
    """Index pairs (i < j) to check on an n-point grid.

    All pairs for n <= 64; otherwise the adjacent pairs, the pairs touching
    either end of the grid, and an evenly spaced selection over the
    remaining pairs ordered by gap, up to *budget*.
    """
    if n <= 64:
        i, j = np.triu_indices(n, 1)
        return i, j
    chosen = set()
    for k in range(n - 1):
        chosen.add((k, k + 1))
    for k in range(1, n):
        chosen.add((0, k))
    for k in range(n - 1):
        chosen.add((k, n - 1))
    remaining = max(0, budget - len(chosen))
    if remaining:
        gaps = np.arange(2, n - 1)
        counts = n - gaps
        total = int(counts.sum())
        picks = np.unique(np.round(np.linspace(0, total - 1, remaining)).astype(np.int64))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        gi = np.searchsorted(offsets, picks, side="right") - 1
        start = picks - offsets[gi]
        for d, s in zip(gaps[gi], start):
            chosen.add((int(s), int(s + d)))
    pairs = sorted(chosen)
    i = np.array([p[0] for p in pairs])
    j = np.array([p[1] for p in pairs])
    return i, j


def _pair_report(name, f, g, x, y, tol, extra_details=None):
    c, dq, found, tolw = find_witnesses(f, g, x, y, tol)
    a = np.minimum(x, y)
    b = np.maximum(x, y)
    gc = _safe_eval(g, np.where(np.isfinite(c), c, a))
    gap = np.abs(gc - dq)
    margin = np.where(np.isnan(gap), -np.inf, tolw - gap)
    margin = np.where(found, margin, np.minimum(margin, -EPS))
    failing = worst_cases(margin, {"x": a, "y": b})
    for w in failing:
        k = int(np.flatnonzero((a == w["x"]) & (b == w["y"]))[0])
        w.update(dq=float(dq[k]), best_c=float(c[k]), g_at_best_c=float(gc[k]))
    lam = np.where(found, (c - a) / (b - a), np.nan)
    samples = [
        MeanFunctionSample(float(a[k]), float(b[k]), float(c[k]), float(lam[k]))
        for k in np.flatnonzero(found)
    ]
    witnesses = [
        MVWitness(float(a[k]), float(b[k]), float(c[k]), float(dq[k]), float(gc[k]))
        for k in np.flatnonzero(found)
    ]
    details = {
        "pairs_with_witness": int(found.sum()),
        "lambda_min": float(np.nanmin(lam)) if found.any() else None,
        "lambda_max": float(np.nanmax(lam)) if found.any() else None,
    }
    if extra_details:
        details.update(extra_details)
    report = CheckReport(
        name=name,
        passed=bool(found.all()),
        checked=int(x.size),
        worst_margin=float(np.min(margin)),
        witnesses=failing,
        details=details,
    )
    report.samples = samples
    report.mv_witnesses = witnesses
    return report


def mv_check(f, g, grid, tol=Tolerance()):
    """Check that g is an MV-function of f over grid pairs.

    The report carries ``samples`` (mean-function samples recovered from
    the witnesses) and ``mv_witnesses`` as attributes; failing pairs are in
    ``witnesses``.
    """
    pts = np.asarray(grid.points, dtype=float)
    i, j = select_pairs(pts.size)
    return _pair_report("mv_function", f, g, pts[i], pts[j], tol)


def strict_mean_check(samples, tol=Tolerance()):
    """Every sample lies strictly between its pair and the weight forms agree.

    Strictness is exact in floating point (an endpoint value fails); samples
    closer to an endpoint than ``strict_margin`` are counted as tight.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("strict_mean_check needs at least one sample")
    x = np.array([s.x for s in samples], dtype=float)
    y = np.array([s.y for s in samples], dtype=float)
    eta = np.array([s.eta for s in samples], dtype=float)
    lam = np.array([s.lam for s in samples], dtype=float)
    if np.any(x == y):
        raise ValueError("samples must have distinct x and y")
    lo = np.minimum(x, y)
    hi = np.maximum(x, y)
    gap = np.minimum(eta - lo, hi - eta)
    between = gap > 0
    in_unit = (lam > 0) & (lam < 1)
    scale = np.maximum(np.abs(x), np.abs(y))
    form_tol = tol.abs_tol + 4 * EPS * scale
    form_a = np.abs(x + (y - x) * lam - eta)
    form_b = np.abs((1.0 - lam) * x + lam * y - eta)
    form_c = np.abs(y + (x - y) * (1.0 - lam) - eta)
    forms_ok = (form_a <= form_tol) & (form_b <= form_tol) & (form_c <= form_tol)
    ok = between & in_unit & forms_ok
    margin = np.where(ok, gap, np.minimum(gap, -(np.maximum.reduce([form_a, form_b, form_c]))))
    margin = np.where(ok, margin, np.minimum(margin, -EPS))
    tight = int(np.sum(between & (gap <= tol.strict_margin * np.maximum(1.0, hi - lo))))
    return CheckReport(
        name="strict_mean",
        passed=bool(ok.all()),
        checked=len(samples),
        worst_margin=float(margin.min()),
        witnesses=worst_cases(margin, {"x": x, "y": y, "eta": eta, "lambda": lam}),
        details={"tight_samples": tight},
    )


def pointwise_mv_generate(f: RealFunction, spec: PointwiseMVSpec, tol=Tolerance()) -> RealFunction:
    """The x0-MV-function t -> (mu / (t - x0)) * (f(x0 + (t - x0)/mu) - f(x0)).

    The result lives on ``x0 + mu * (I - x0)``. Its removable point t = x0
    is filled with the common one-sided limit when the two sides agree;
    otherwise evaluating there raises.
    """
    x0, mu = float(spec.x0), float(spec.mu)
    dom = f.domain
    if not dom.contains(x0):
        raise ValueError(f"x0={x0} is not in the domain {dom}")
    lo = x0 + mu * (dom.lo - x0) if math.isfinite(dom.lo) else -math.inf
    hi = x0 + mu * (dom.hi - x0) if math.isfinite(dom.hi) else math.inf
    if not lo < hi:
        raise ValueError("generated domain is empty")
    new_domain = Interval(lo, hi, dom.lo_closed, dom.hi_closed)
    shift = BinOp("-", Var(), num(x0))
    inner = BinOp("+", num(x0), BinOp("/", shift, num(mu)))
    body = BinOp(
        "*",
        BinOp("/", num(mu), shift),
        BinOp("-", substitute(f.body, inner), num(f(x0))),
    )
    g = RealFunction(body, new_domain)
    sides = []
    for side in ("left", "right"):
        if new_domain.interior_contains(x0) or (side == "right" and x0 == lo) or (side == "left" and x0 == hi):
            try:
                v, e = one_sided_limits(g, [x0], side)
            except EvalError:
                continue
            if np.isfinite(v[0]):
                sides.append((float(v[0]), float(e[0])))
    if sides:
        vals = [v for v, _ in sides]
        spread = max(vals) - min(vals)
        allowance = float(tol.bound(max(abs(v) for v in vals))) + sum(e for _, e in sides)
        if spread <= allowance:
            g = g.with_overrides((x0, float(np.mean(vals))))
    return g


def pointwise_mv_check(f, x0, g, grid, tol=Tolerance()):
    """MV check restricted to the pairs (x0, y), y in the grid."""
    pts = np.asarray(grid.points, dtype=float)
    # points closer to x0 than the grid's float resolution give no usable chord
    resolution = 8 * EPS * max(1.0, float(np.max(np.abs(pts))))
    ys = pts[np.abs(pts - x0) > resolution]
    xs = np.full(ys.shape, float(x0))
    extra = {"x0": float(x0), "unresolved_points": int(pts.size - ys.size - np.sum(pts == x0))}
    return _pair_report("pointwise_mv_function", f, g, xs, ys, tol, extra)


def mu_equation_check(mu, x0, grid, tol=Tolerance()):
    """Check mu(t*mu(t) - x0*mu(t) + x0) == mu(t) on the grid.

    Grid points whose transformed argument leaves mu's domain are skipped
    and counted; mu values outside (0, 1) fail the check as a
    precondition violation.
    """
    t = np.asarray(grid.points, dtype=float)
    m = _safe_eval(mu, t)
    bad_range = ~((m > 0) & (m < 1))
    notes = []
    if bad_range.any():
        notes.append(f"mu leaves (0, 1) at {int(bad_range.sum())} grid point(s)")
    arg = t * m - x0 * m + x0
    domain = getattr(mu, "domain", None)
    inside = ~bad_range & (domain.contains(arg) if domain is not None else True)
    skipped = int(np.sum(~bad_range & ~inside))
    if skipped:
        notes.append(f"{skipped} transformed argument(s) outside the domain were skipped")
    lhs = np.full(t.shape, np.nan)
    if inside.any():
        lhs[inside] = _safe_eval(mu, arg[inside])
    diff = np.abs(lhs - m)
    slack = tol.bound(np.abs(m))
    margin = np.where(inside, slack - diff, np.inf)
    margin = np.where(np.isnan(margin), -np.inf, margin)
    margin = np.where(bad_range, -1.0, margin)
    checked = int(inside.sum())
    return CheckReport(
        name="mu_equation",
        passed=bool(np.all(margin >= 0)),
        checked=checked,
        worst_margin=float(margin.min()) if margin.size else None,
        witnesses=worst_cases(margin, {"t": t, "mu_t": m, "argument": arg}),
        notes=notes,
        details={"max_abs_difference": float(np.nanmax(np.where(inside, diff, np.nan))) if checked else None},
    )


def ode_residual_check(f, mu, grid, tol=Tolerance()):
    """Residual of t f'(t) - mu f(t/mu) + mu f(0) over the grid.

    f'(t) comes from the two one-sided derivatives; points where they
    disagree are flagged indeterminate and left out of the verdict.
    """
    if not 0.0 < mu < 1.0:
        raise ValueError(f"mu must lie in (0, 1), got {mu}")
    domain = f.domain
    if not domain.contains(0.0):
        raise ValueError("0 must lie in the domain of f")
    t = np.asarray(grid.points, dtype=float)
    usable = domain.interior_contains(t) & domain.contains(t / mu)
    t = t[usable]
    notes = []
    skipped = int((~usable).sum())
    if skipped:
        notes.append(f"{skipped} grid point(s) with t/mu outside the domain were skipped")
    dl, el = one_sided_derivatives(f, t, "left")
    dr, er = one_sided_derivatives(f, t, "right")
    agree = np.abs(dl - dr) <= tol.bound(np.maximum(np.abs(dl), np.abs(dr))) + 4 * (el + er)
    indeterminate = t[~agree]
    if indeterminate.size:
        notes.append(f"{indeterminate.size} non-differentiable point(s) excluded")
    deriv = 0.5 * (dl + dr)
    tf = t * deriv
    residual = tf - mu * f(t / mu) + mu * f(0.0)
    scale = np.maximum(1.0, np.abs(tf))
    allowed = tol.bound(0.0) * scale + np.abs(t) * 4 * 0.5 * (el + er)
    margin = np.where(agree, allowed - np.abs(residual), np.inf)
    return CheckReport(
        name="ode_residual",
        passed=bool(np.all(margin >= 0)) and bool(agree.any()),
        checked=int(agree.sum()),
        worst_margin=float(margin.min()) if margin.size else None,
        witnesses=worst_cases(margin, {"t": t, "residual": residual}),
        notes=notes,
        details={
            "max_abs_residual": float(np.max(np.abs(residual[agree]))) if agree.any() else None,
            "indeterminate_points": indeterminate.tolist(),
        },
    )


def ode_residual(f, mu, t):
    """Pointwise residual t f'(t) - mu f(t/mu) + mu f(0) (derivative averaged)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    dl, _ = one_sided_derivatives(f, t, "left")
    dr, _ = one_sided_derivatives(f, t, "right")
    return t * 0.5 * (dl + dr) - mu * f(t / mu) + mu * f(0.0)


def rational_mean_witness(x, y) -> Fraction:
    """Exact rational midpoint of x and y.

    Rationals are dense, so the indicator of the rationals attains the
    identity's chord slope 1 at this point.
    """
    x, y = Fraction(x), Fraction(y)
    if x == y:
        raise ValueError("degenerate pair x == y")
    return (x + y) / 2
