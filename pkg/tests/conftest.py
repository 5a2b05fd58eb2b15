import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fraclab.domain import box_domain, interval_domain
from fraclab.kernel import KernelSpec, assemble_kernel

settings.register_profile("fraclab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fraclab")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def line_1d():
    return interval_domain(0.0, 1.0, 1 / 40)


@pytest.fixture
def square_2d():
    return box_domain([[0.0, 1.0], [0.0, 1.0]], 1 / 12)


@pytest.fixture
def table_1d(line_1d):
    return assemble_kernel(line_1d, KernelSpec(0.25, 2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
