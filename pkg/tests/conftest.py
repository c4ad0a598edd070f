import pytest
from hypothesis import HealthCheck, settings

from butterfly.schedule import build_schedule

# compiled kernels make the first example slow
settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

RADIX_GRID = [(r, m) for r in (2, 3) for m in range(1, 6)]
MIXED_GRID = [(r, c) for r in (2, 3) for c in range(1, 9)]


def grid_schedules():
    return ([build_schedule("radix", r=r, m=m) for r, m in RADIX_GRID]
            + [build_schedule("mixed", r=r, c=c) for r, c in MIXED_GRID])


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def record():
    """Collect one summary line per acceptance criterion."""
    def add(number, passed, detail=""):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        ACCEPTANCE_LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
