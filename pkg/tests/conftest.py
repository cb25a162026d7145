import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def so3_homotopy():
    from poisson_rigidity.cohomology import build_homotopy
    from poisson_rigidity.lie import so3

    return build_homotopy(so3(), 10)


@pytest.fixture(scope="session")
def so3_homotopy_17():
    from poisson_rigidity.cohomology import build_homotopy
    from poisson_rigidity.lie import so3

    return build_homotopy(so3(), 17, diagnose=(2,))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
