import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running numerical runs")


@pytest.fixture(scope="session")
def torus_run():
    """Fourier-mode heat run on the 32^2 torus, V = 0."""
    from bakry_lab import build_manifold, make_setup, run_weighted_heat
    import numpy as np

    chart = build_manifold("flat_torus", 32)
    setup = make_setup(chart)
    return run_weighted_heat(chart, setup, "1+0.5*sin(2*pi*x)", 1.0,
                             snapshot_times=list(np.linspace(0.01, 1.0, 60)))


@pytest.fixture(scope="session")
def torus_run_drift():
    """Same initial data with V = grad cos(2 pi y) and n = 3."""
    from bakry_lab import build_manifold, make_setup, run_weighted_heat
    import numpy as np

    chart = build_manifold("flat_torus", 32)
    setup = make_setup(chart, potential="cos(2*pi*y)", n=3)
    return run_weighted_heat(chart, setup, "1+0.5*sin(2*pi*x)", 1.0,
                             snapshot_times=list(np.linspace(0.01, 1.0, 60)))


ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k:>2}. {title}: {detail}")
