import numpy as np
import pytest

from lpkfda.simulation import SimConfig, generate_sample
from lpkfda.numerics import spawn_stream


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sim_sample():
    """One draw from the default simulation model (n = 20, m = 40)."""
    return generate_sample(SimConfig(M=101), spawn_stream(99, 0))


ACCEPTANCE_LINES = []


def record_criterion(number, name, passed, detail, seconds):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {name} | {detail} | {seconds:.1f}s"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
