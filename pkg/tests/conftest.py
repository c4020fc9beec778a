import numpy as np
import pytest

from obslab.landmarks import LandmarkSet
from obslab.sim import DEFAULT_LANDMARKS

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = {}


def record_acceptance(key, passed, detail):
    ACCEPTANCE_LINES[key] = f"{key}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[key])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: [int(p) if p.isdigit() else p for p in k.replace("-", " ").split()]):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def landmarks3():
    return LandmarkSet(DEFAULT_LANDMARKS)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
