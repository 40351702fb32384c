import numpy as np
import pytest

from pignpi.data import analytic_dataset
from pignpi.sim import simulate_law


@pytest.fixture(scope="session")
def spring_small():
    """Short 2D spring trajectory for cheap tests."""
    return analytic_dataset(simulate_law("spring", 5, 2, 60, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
