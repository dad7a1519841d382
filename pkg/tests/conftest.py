import numpy as np
import pytest

from fade.rng import SplitMix64


@pytest.fixture
def rng():
    return SplitMix64(20240601)


def randn(rng, *shape, dtype=np.float32):
    return rng.normal(shape).astype(dtype)


# Lines recorded by test_acceptance.py; printed after the run so they survive output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
