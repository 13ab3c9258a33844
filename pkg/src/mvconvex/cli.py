"""Command-line front end: ``mvconvex <command> [options]``.

Every run produces a JSON report (schema ``mvconvex-report/1``). Exit codes:
0 pass, 1 fail, 2 usage, parse or domain error, 3 numerical breakdown
(budget exhausted, inversion bracket lost, or overflow).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .calculus import NumericalBreakdown, Tolerance, make_grid, sampling_range
from .feq import (
    convex_concave_check,
    eta_samples,
    linear_comparative_solve,
    mv_inequality_check,
    self_convexity_check,
    solve_mv_equation,
    solve_mv_inequality,
    symmetric_convexity_check,
    uniqueness_probe,
)
from .fnexpr import EvalError, ExprSyntaxError, Interval, NonFiniteError, RealFunction, Var, function, parse
from .gconvex import (
    DEFAULT_LAMBDAS,
    bounds_certificate,
    construct_from_quotient_bound,
    equivalence_suite,
    gconvex_check,
)
from .mv import (
    PointwiseMVSpec,
    mu_equation_check,
    mv_check,
    ode_residual_check,
    pointwise_mv_check,
    pointwise_mv_generate,
    strict_mean_check,
)
from .report import SCHEMA_VERSION, dumps

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_BREAKDOWN = 0, 1, 2, 3

COMMANDS = (
    "check-mv",
    "check-pointwise-mv",
    "check-gconvex",
    "check-bounds",
    "check-mv-ineq",
    "construct",
    "solve-mv",
    "solve-mv-ineq",
    "solve-feq",
    "emit-table",
)
SYSTEMS = ("self-convex", "linear", "symmetric", "convex-concave")
FUNCTION_KEYS = ("f", "g", "h", "phi", "mu")
VALUE_FLAGS = {
    "--f", "--g", "--h", "--phi", "--mu", "--interval", "--h-interval", "--window", "--grid", "--tol",
    "--strict-margin", "--lambda", "--x0", "--k", "--c", "--fc", "--t0", "--f0", "--points", "--g-at",
    "--out", "--table", "--config", "--system",
}


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    functions: dict = field(default_factory=dict)
    interval: str = "-inf:inf"
    h_interval: str | None = None
    window: str | None = None
    grid_size: int = 201
    tol: float | None = None
    strict_margin: float | None = None
    lambdas: list = field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    x0: float = 0.0
    k: float | None = None
    c: float = 0.0
    fc: float = 0.0
    t0: float = 0.0
    f0: float | None = None
    system: str | None = None
    points: list | None = None
    g_at: list = field(default_factory=list)
    timing: bool = False

    def echo(self):
        out = {
            "name": self.command,
            "functions": dict(sorted(self.functions.items())),
            "interval": self.interval,
            "grid_size": self.grid_size,
        }
        optional = {
            "h_interval": self.h_interval,
            "window": self.window,
            "tol": self.tol,
            "strict_margin": self.strict_margin,
            "system": self.system,
            "points": self.points,
            "g_at": self.g_at or None,
        }
        out.update({k: v for k, v in optional.items() if v is not None})
        if self.command == "check-gconvex":
            out["lambdas"] = list(self.lambdas)
        if self.command == "check-pointwise-mv":
            out["x0"] = self.x0
        if self.command in ("construct", "solve-mv", "solve-mv-ineq", "emit-table"):
            out["c"], out["fc"] = self.c, self.fc
        if self.command == "solve-feq" and self.system == "linear":
            out.update(k=self.k, t0=self.t0, f0=self.f0)
        return out


# -- parsing helpers -----------------------------------------------------------


def parse_interval(text):
    """``LO:HI[:oo|oc|co|cc]``; ``inf``/``-inf`` allowed for unbounded ends."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise UsageError(f"interval must be LO:HI[:oo|oc|co|cc], got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise UsageError(f"bad interval endpoints in {text!r}") from None
    flags = parts[2] if len(parts) == 3 else "oo"
    if flags not in ("oo", "oc", "co", "cc"):
        raise UsageError(f"interval closedness must be one of oo, oc, co, cc, got {flags!r}")
    try:
        return Interval(lo, hi, flags[0] == "c", flags[1] == "c")
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def parse_window(text):
    if text is None:
        return None
    parts = text.split(":")
    if len(parts) != 2:
        raise UsageError(f"window must be LO:HI, got {text!r}")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise UsageError(f"bad window {text!r}") from None
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise UsageError(f"window must be finite with LO < HI, got {text!r}")
    return lo, hi


def _constant(node):
    """Value of an expression that does not mention x, else None."""
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Var):
            return None
        stack.extend(getattr(n, "args", ()))
        for attr in ("operand", "left", "right"):
            if hasattr(n, attr):
                stack.append(getattr(n, attr))
    return float(RealFunction(node)(0.0))


def emit_table(f, points):
    """Two-column CSV ``x,f(x)`` with 17 significant digits and LF endings."""
    pts = np.asarray(getattr(points, "points", points), dtype=float)
    if pts.size == 0:
        raise UsageError("cannot tabulate on an empty grid")
    values = np.asarray(f(pts), dtype=float)
    lines = ["x,f(x)"] + [f"{x:.17g},{y:.17g}" for x, y in zip(pts, values)]
    return "\n".join(lines) + "\n"


# -- run -------------------------------------------------------------------------


class _Context:
    def __init__(self, cfg):
        self.cfg = cfg
        self.interval = parse_interval(cfg.interval)
        self.window = parse_window(cfg.window)
        if cfg.grid_size < 3:
            raise UsageError("grid size must be at least 3")
        base = Tolerance()
        tol = base if cfg.tol is None else replace(base, abs_tol=cfg.tol, rel_tol=cfg.tol)
        if cfg.strict_margin is not None:
            tol = replace(tol, strict_margin=cfg.strict_margin)
        self.tol = tol
        self.sources = {}
        for key, text in cfg.functions.items():
            if key not in FUNCTION_KEYS:
                raise UsageError(f"unknown function name {key!r}")
            if text is not None:
                self.sources[key] = parse(text)

    def fn(self, key, domain=None):
        if key not in self.sources:
            raise UsageError(f"--{key} is required for {self.cfg.command}")
        f = RealFunction(self.sources[key], domain or self.interval)
        if key == "g" and self.cfg.g_at:
            f = f.with_overrides(*self.cfg.g_at)
        return f

    def grid(self, domain=None):
        return make_grid(domain or self.interval, self.cfg.grid_size, 64, self.window, self.tol)


def _report(kind, obj):
    d = obj.to_dict()
    d.setdefault("name", kind)
    return d


def _cmd_check_mv(ctx):
    f, g = ctx.fn("f"), ctx.fn("g")
    grid = ctx.grid()
    main = mv_check(f, g, grid, ctx.tol)
    results = {"mv": _report("mv", main)}
    passed = main.passed
    if main.samples:
        strict = strict_mean_check(main.samples, ctx.tol)
        results["strict_mean"] = _report("strict_mean", strict)
        passed = passed and strict.passed
    return grid, passed, results, main.witnesses, {}


def _cmd_check_pointwise(ctx):
    f = ctx.fn("f")
    x0 = float(ctx.cfg.x0)
    results = {}
    passed = True
    witnesses = []
    if "mu" in ctx.sources:
        mu_value = _constant(ctx.sources["mu"])
        mu_fn = ctx.fn("mu")
        mu_rep = mu_equation_check(mu_fn, x0, ctx.grid(), ctx.tol)
        results["mu_equation"] = _report("mu_equation", mu_rep)
        passed = mu_rep.passed
        witnesses += mu_rep.witnesses
        if mu_value is None:
            if "g" not in ctx.sources:
                raise UsageError("a non-constant --mu needs an explicit --g")
        elif "g" not in ctx.sources:
            spec = PointwiseMVSpec(x0, mu_value)
            g = pointwise_mv_generate(f, spec, ctx.tol)
            grid = ctx.grid(g.domain)
            rep = pointwise_mv_check(f, x0, g, grid, ctx.tol)
            results["pointwise_mv"] = _report("pointwise_mv", rep)
            results["generated_g"] = {"source": g.source, "domain": g.domain.to_dict()}
            passed = passed and rep.passed
            witnesses += rep.witnesses
            if x0 == 0.0:
                ode = ode_residual_check(f, mu_value, ctx.grid(), ctx.tol)
                results["ode_residual"] = _report("ode_residual", ode)
                passed = passed and ode.passed
                witnesses += ode.witnesses
            return grid, passed, results, witnesses, {"mu": mu_value, "x0": x0}
    if "g" not in ctx.sources:
        raise UsageError("check-pointwise-mv needs --g or a constant --mu")
    g = ctx.fn("g")
    grid = ctx.grid()
    rep = pointwise_mv_check(f, x0, g, grid, ctx.tol)
    results["pointwise_mv"] = _report("pointwise_mv", rep)
    return grid, passed and rep.passed, results, witnesses + rep.witnesses, {"x0": x0}


def _cmd_check_gconvex(ctx):
    f, g = ctx.fn("f"), ctx.fn("g")
    grid = ctx.grid()
    lambdas = ctx.cfg.lambdas
    if any(not 0.0 <= v <= 1.0 for v in lambdas):
        raise UsageError("--lambda values must lie in [0, 1]")
    base = gconvex_check(f, g, grid, ctx.tol)
    suite = equivalence_suite(f, g, grid, lambdas, ctx.tol)
    results = {"gconvex": _report("gconvex", base), "equivalence": _report("equivalence", suite)}
    return grid, base.passed and suite.passed, results, base.witnesses or suite.witnesses, {}


def _cmd_check_bounds(ctx):
    f, g = ctx.fn("f"), ctx.fn("g")
    grid = ctx.grid()
    rep = bounds_certificate(f, g, grid, ctx.tol)
    return grid, rep.passed, {"bounds": _report("bounds", rep)}, rep.witnesses, {}


def _cmd_check_mv_ineq(ctx):
    f, h = ctx.fn("f"), ctx.fn("h", _h_domain(ctx))
    grid = ctx.grid()
    rep = mv_inequality_check(f, h, grid, ctx.tol)
    return grid, rep.passed, {"mv_inequality": _report("mv_inequality", rep)}, rep.witnesses, {}


def _h_domain(ctx):
    return parse_interval(ctx.cfg.h_interval) if ctx.cfg.h_interval else Interval.real_line()


def _constructed(ctx):
    g = ctx.fn("g")
    return construct_from_quotient_bound(g, ctx.cfg.c, ctx.cfg.fc, ctx.interval, ctx.tol, ctx.window), g


def _cmd_construct(ctx):
    f, g = _constructed(ctx)
    grid = ctx.grid(f.domain)
    rep = gconvex_check(f, g, grid, ctx.tol)
    results = {"gconvex": _report("gconvex", rep)}
    params = {"c": float(ctx.cfg.c), "fc": float(ctx.cfg.fc), "integration_error": f.error_estimate}
    return grid, rep.passed, results, rep.witnesses, params, f


def _cmd_solve_mv(ctx):
    g = ctx.fn("g")
    sol = solve_mv_equation(g, ctx.interval, ctx.cfg.c, ctx.cfg.fc, ctx.tol, ctx.window)
    grid = ctx.grid(sol.f.domain)
    mv = mv_check(sol.f, g, grid, ctx.tol)
    strict = strict_mean_check(eta_samples(sol, grid), ctx.tol)
    results = {"mv": _report("mv", mv), "strict_mean": _report("strict_mean", strict)}
    params = dict(sol.params, **sol.details)
    return grid, mv.passed and strict.passed, results, mv.witnesses + strict.witnesses, params, sol.f


def _cmd_solve_mv_ineq(ctx):
    h = ctx.fn("h", _h_domain(ctx))
    sol = solve_mv_inequality(h, ctx.interval, ctx.cfg.c, ctx.cfg.fc, ctx.tol, ctx.window)
    grid = ctx.grid(sol.f.domain)
    ineq = mv_inequality_check(sol.f, h, grid, ctx.tol)
    uniq = uniqueness_probe(sol.f, h, grid, ctx.tol)
    results = {"mv_inequality": _report("mv_inequality", ineq), "uniqueness": _report("uniqueness", uniq)}
    params = dict(sol.params, **sol.details)
    return grid, ineq.passed and uniq.passed, results, ineq.witnesses + uniq.witnesses, params, sol.f


def _cmd_solve_feq(ctx):
    system = ctx.cfg.system
    if system not in SYSTEMS:
        raise UsageError(f"--system must be one of {', '.join(SYSTEMS)}")
    if system == "linear":
        if ctx.cfg.k is None or ctx.cfg.f0 is None:
            raise UsageError("--system linear needs --k and --f0")
        phi = ctx.fn("phi") if "phi" in ctx.sources else function("0", ctx.interval)
        v = linear_comparative_solve(ctx.cfg.k, phi, ctx.interval, ctx.cfg.t0, ctx.cfg.f0, ctx.tol, ctx.window, ctx.cfg.grid_size)
        grid = make_grid(v.solution.domain, ctx.cfg.grid_size, 64, None, ctx.tol)
        return grid, v.passed, {"system": v.to_dict()}, v.witnesses, v.fitted_params, v.solution
    grid = ctx.grid()
    if system == "self-convex":
        v = self_convexity_check(ctx.fn("f"), grid, ctx.tol)
    elif system == "symmetric":
        v = symmetric_convexity_check(ctx.fn("f"), ctx.fn("g"), grid, ctx.tol)
    else:
        v = convex_concave_check(ctx.fn("f"), ctx.fn("g"), ctx.fn("h"), grid, ctx.tol)
    return grid, v.passed, {"system": v.to_dict()}, v.witnesses, v.fitted_params


def _cmd_emit_table(ctx):
    if "g" in ctx.sources and "f" not in ctx.sources:
        f, _ = _constructed(ctx)
    else:
        f = ctx.fn("f")
    if ctx.cfg.points is not None:
        pts = np.asarray(ctx.cfg.points, dtype=float)
        if pts.size and not np.all(f.domain.contains(pts)):
            raise UsageError("table points must lie in the domain")
    else:
        lo, hi, _ = sampling_range(f.domain, ctx.window, ctx.tol)
        n = ctx.cfg.grid_size
        i = np.arange(n, dtype=float)
        pts = np.clip((lo * (n - 1 - i) + hi * i) / (n - 1), lo, hi)
    return emit_table(f, pts), pts


HANDLERS = {
    "check-mv": _cmd_check_mv,
    "check-pointwise-mv": _cmd_check_pointwise,
    "check-gconvex": _cmd_check_gconvex,
    "check-bounds": _cmd_check_bounds,
    "check-mv-ineq": _cmd_check_mv_ineq,
    "construct": _cmd_construct,
    "solve-mv": _cmd_solve_mv,
    "solve-mv-ineq": _cmd_solve_mv_ineq,
    "solve-feq": _cmd_solve_feq,
}


def run(cfg: RunConfig):
    """Execute *cfg*; returns ``(report, exit_code, extra)``.

    *extra* carries the CSV text for table output, or None.
    """
    report = {"schema_version": SCHEMA_VERSION, "command": cfg.echo()}
    start = time.perf_counter()
    extra = None
    try:
        if cfg.command not in COMMANDS:
            raise UsageError(f"unknown command {cfg.command!r}")
        ctx = _Context(cfg)
        report["tolerances"] = ctx.tol.to_dict()
        if cfg.command == "emit-table":
            extra, pts = _cmd_emit_table(ctx)
            report.update(verdict="pass", rows=int(len(pts)))
            code = EXIT_PASS
        else:
            out = HANDLERS[cfg.command](ctx)
            grid, passed, results, witnesses, params = out[:5]
            if len(out) > 5 and cfg.points is not None:
                extra = emit_table(out[5], cfg.points)
            elif len(out) > 5:
                extra = emit_table(out[5], grid)
            report.update(
                verdict="pass" if passed else "fail",
                results=results,
                witnesses=witnesses[:20],
                fitted_params=params,
                window=list(grid.window),
                grid=grid.to_dict(),
            )
            code = EXIT_PASS if passed else EXIT_FAIL
    except (NumericalBreakdown, NonFiniteError, FloatingPointError, OverflowError) as exc:
        report.update(verdict="error", error={"kind": "numerical_breakdown", "message": str(exc)})
        code = EXIT_BREAKDOWN
    except (UsageError, ExprSyntaxError, EvalError, ValueError) as exc:
        report.update(verdict="error", error={"kind": "usage", "message": str(exc)})
        code = EXIT_USAGE
    report["exit_code"] = code
    if cfg.timing:
        report["timing"] = {"seconds": time.perf_counter() - start}
    return report, code, extra


# -- argument handling ----------------------------------------------------------------


def _parse_pin(text):
    try:
        p, v = text.split("=")
        return float(p), float(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X=VALUE, got {text!r}") from None


def _parse_points(text):
    if text.strip() == "":
        return []
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad point list {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="mvconvex", description="Mean value and comparative convexity checks.")
    p.add_argument("command", choices=COMMANDS)
    for key in FUNCTION_KEYS:
        p.add_argument(f"--{key}", metavar="EXPR")
    p.add_argument("--interval", metavar="LO:HI[:oo|oc|co|cc]")
    p.add_argument("--h-interval", metavar="LO:HI[:FLAGS]", help="domain of h (default: real line)")
    p.add_argument("--window", metavar="LO:HI")
    p.add_argument("--grid", type=int, metavar="N")
    p.add_argument("--tol", type=float, metavar="X", help="absolute and relative tolerance")
    p.add_argument("--strict-margin", type=float, metavar="X")
    p.add_argument("--lambda", dest="lambdas", type=float, action="append", metavar="L")
    p.add_argument("--x0", type=float)
    p.add_argument("--k", type=float)
    p.add_argument("--c", type=float, help="anchor point for constructions")
    p.add_argument("--fc", type=float, help="value at the anchor")
    p.add_argument("--t0", type=float)
    p.add_argument("--f0", type=float)
    p.add_argument("--system", choices=SYSTEMS)
    p.add_argument("--points", type=_parse_points, metavar="X1,X2,...")
    p.add_argument("--g-at", type=_parse_pin, action="append", metavar="X=VALUE", help="pin g at a point")
    p.add_argument("--config", metavar="PATH", help="flat JSON document; flags override it")
    p.add_argument("--out", metavar="PATH", help="write the JSON report here")
    p.add_argument("--table", metavar="PATH", help="write the x,f(x) table here")
    p.add_argument("--json", action="store_true", help="print the JSON report to stdout")
    p.add_argument("--timing", action="store_true", help="include wall time (breaks byte-identity)")
    return p


def _glue_negative_values(argv):
    """Join ``--flag -2:2`` into ``--flag=-2:2`` so argparse keeps the value."""
    out = []
    i = 0
    while i < len(argv):
        a = argv[i]
        if a in VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-") and argv[i + 1] not in VALUE_FLAGS:
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


CONFIG_KEYS = {
    "f", "g", "h", "phi", "mu", "interval", "h_interval", "window", "grid", "tol", "strict_margin",
    "lambda", "x0", "k", "c", "fc", "t0", "f0", "system", "points", "g_at",
}


def config_from_args(args, file_values=None):
    merged = dict(file_values or {})
    unknown = set(merged) - CONFIG_KEYS - {"command"}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cli = {
        "f": args.f, "g": args.g, "h": args.h, "phi": args.phi, "mu": args.mu,
        "interval": args.interval, "h_interval": args.h_interval, "window": args.window,
        "grid": args.grid, "tol": args.tol, "strict_margin": args.strict_margin, "lambda": args.lambdas,
        "x0": args.x0, "k": args.k, "c": args.c, "fc": args.fc, "t0": args.t0, "f0": args.f0,
        "system": args.system, "points": args.points, "g_at": args.g_at,
    }
    merged.update({k: v for k, v in cli.items() if v is not None})
    command = args.command
    cfg = RunConfig(
        command=command,
        functions={k: merged[k] for k in FUNCTION_KEYS if merged.get(k) is not None},
        interval=merged.get("interval", "-inf:inf"),
        h_interval=merged.get("h_interval"),
        window=merged.get("window"),
        grid_size=int(merged.get("grid", 201)),
        tol=merged.get("tol"),
        strict_margin=merged.get("strict_margin"),
        lambdas=[float(v) for v in merged.get("lambda", DEFAULT_LAMBDAS)],
        x0=float(merged.get("x0", 0.0)),
        k=merged.get("k"),
        c=float(merged.get("c", 0.0)),
        fc=float(merged.get("fc", 0.0)),
        t0=float(merged.get("t0", 0.0)),
        f0=merged.get("f0"),
        system=merged.get("system"),
        points=merged.get("points"),
        g_at=[tuple(map(float, p)) for p in merged.get("g_at", [])],
        timing=args.timing,
    )
    return cfg


def _summary(report):
    lines = [f"{report['command']['name']}: {report['verdict']}"]
    if "error" in report:
        lines.append(f"  {report['error']['kind']}: {report['error']['message']}")
    for w in report.get("witnesses", [])[:3]:
        lines.append("  witness " + ", ".join(f"{k}={v}" for k, v in sorted(w.items())))
    return "\n".join(lines)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_glue_negative_values(argv))
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    file_values = None
    try:
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                file_values = json.load(fh)
            if not isinstance(file_values, dict):
                raise UsageError("config file must hold a JSON object")
            if file_values.get("command", args.command) != args.command:
                raise UsageError("config command does not match the command line")
        cfg = config_from_args(args, file_values)
    except (OSError, json.JSONDecodeError, UsageError, ValueError, TypeError) as exc:
        print(f"mvconvex: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report, code, table = run(cfg)
    text = dumps(report)
    try:
        if args.out:
            with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        if args.table and table is not None:
            with open(args.table, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(table)
    except OSError as exc:
        print(f"mvconvex: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if cfg.command == "emit-table" and table is not None and not args.table and not args.json:
        sys.stdout.write(table)
    elif args.json:
        sys.stdout.write(text)
    else:
        print(_summary(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
