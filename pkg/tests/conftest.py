import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def half_bits(values):
    """binary16 bit patterns of exactly representable values."""
    return np.asarray(values, dtype=np.float16).view(np.uint16)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
