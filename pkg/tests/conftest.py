import sys

import numpy as np
import pytest

from hypershell.asymptotic_atlas import build_chart
from hypershell.surface_geometry import CurveOnSurface, get_surface


def line_anchor(p, d, t_range):
    p = np.asarray(p, dtype=float)
    d = np.asarray(d, dtype=float)
    return CurveOnSurface(lambda t: p + np.asarray(t, dtype=float)[..., None] * d, t_range,
                          lambda t: np.broadcast_to(d, np.shape(t) + (2,)))


@pytest.fixture(scope="session")
def saddle():
    return get_surface("monkey_saddle")


@pytest.fixture(scope="session")
def paraboloid():
    return get_surface("hyperbolic_paraboloid")


@pytest.fixture(scope="session")
def paraboloid_anchor():
    return line_anchor((0.0, 0.0), (1.0, -1.0), (-0.5, 0.5))


@pytest.fixture(scope="session")
def saddle_anchor():
    return line_anchor((1.0, -1.0), (1.0, -1.0), (-0.2, 0.2))


@pytest.fixture(scope="session")
def paraboloid_chart(paraboloid, paraboloid_anchor):
    return build_chart(paraboloid, paraboloid_anchor, n=65)


@pytest.fixture(scope="session")
def saddle_chart(saddle, saddle_anchor):
    return build_chart(saddle, saddle_anchor, n=65)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in range(1, 10):
        if key in results:
            ok, detail = results[key]
            terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {key}: NOT RUN")
