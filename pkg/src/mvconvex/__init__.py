"""Mean value functions and comparative (g-) convexity, checked numerically."""

from .calculus import (
    Grid,
    NumericalBreakdown,
    Tolerance,
    check_convex,
    check_monotone,
    difference_quotient,
    integrate_monotone,
    make_grid,
    one_sided_derivative,
    one_sided_limit,
)
from .feq import (
    FeqSolution,
    SystemVerdict,
    convex_concave_check,
    linear_comparative_solve,
    mv_inequality_check,
    self_convexity_check,
    solve_mv_equation,
    solve_mv_inequality,
    symmetric_convexity_check,
    uniqueness_probe,
)
from .fnexpr import (
    DomainError,
    EvalError,
    ExprSyntaxError,
    Interval,
    NonFiniteError,
    RealFunction,
    function,
    parse,
)
from .gconvex import (
    DQBSpec,
    GConvexReport,
    LambdaBlend,
    bounds_certificate,
    construct_from_quotient_bound,
    dqb_family,
    equivalence_suite,
    gconvex_check,
    sandwich_check,
)
from .mv import (
    PointwiseMVSpec,
    mu_equation_check,
    mv_check,
    mv_witness,
    ode_residual_check,
    pointwise_mv_check,
    pointwise_mv_generate,
    strict_mean_check,
)
from .report import CheckReport

__version__ = "0.1.0"

__all__ = [
    "CheckReport",
    "DQBSpec",
    "DomainError",
    "EvalError",
    "ExprSyntaxError",
    "FeqSolution",
    "GConvexReport",
    "Grid",
    "Interval",
    "LambdaBlend",
    "NonFiniteError",
    "NumericalBreakdown",
    "PointwiseMVSpec",
    "RealFunction",
    "SystemVerdict",
    "Tolerance",
    "bounds_certificate",
    "check_convex",
    "check_monotone",
    "construct_from_quotient_bound",
    "convex_concave_check",
    "difference_quotient",
    "dqb_family",
    "equivalence_suite",
    "function",
    "gconvex_check",
    "integrate_monotone",
    "linear_comparative_solve",
    "make_grid",
    "mu_equation_check",
    "mv_check",
    "mv_inequality_check",
    "mv_witness",
    "ode_residual_check",
    "one_sided_derivative",
    "one_sided_limit",
    "parse",
    "pointwise_mv_check",
    "pointwise_mv_generate",
    "sandwich_check",
    "self_convexity_check",
    "solve_mv_equation",
    "solve_mv_inequality",
    "strict_mean_check",
    "symmetric_convexity_check",
    "uniqueness_probe",
]
