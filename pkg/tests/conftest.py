import numpy as np
import pytest

from ksns import grid

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(autouse=True)
def _single_worker():
    grid.set_fft_workers(1)
    yield
    grid.set_fft_workers(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def dom2():
    return grid.BoxDomain((np.pi, 2.0), (16, 12))


@pytest.fixture
def dom3():
    return grid.BoxDomain((1.0, 1.5, 2.0), (6, 8, 10))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
