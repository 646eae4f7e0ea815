import numpy as np
import pytest

from diffrerank import kernels
from diffrerank.schedule import make_linear_schedule

KERNEL_BACKENDS = ["python"] + (["compiled"] if kernels._compiled is not None else [])


@pytest.fixture(scope="session")
def schedule():
    return make_linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture(params=KERNEL_BACKENDS)
def kernel_backend(request, monkeypatch):
    """Run the test once per available kernel implementation."""
    monkeypatch.setattr(kernels, "BACKEND", request.param)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report lines, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
