import math
import sys

import pytest
from hypothesis import HealthCheck, settings

from mvconvex.calculus import Tolerance, make_grid
from mvconvex.fnexpr import Interval

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def sym2():
    """Open interval (-2, 2) with the standard 201 + 64 point grid."""
    interval = Interval.open(-2, 2)
    return interval, make_grid(interval, 201)


@pytest.fixture
def tight():
    return Tolerance(1e-8, 1e-8)


E = math.e


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results, key=lambda k: (int(k.rstrip("ab")), k)):
            terminalreporter.write_line(results[key])
