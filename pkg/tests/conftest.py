import numpy as np
import pytest

from flightrts.simulate import Scenario, simulate_flight
from flightrts.timeseries import extract_landing_window

# (criterion, passed, detail) lines collected by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {crit:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def constant_flight():
    """Landing with constant true noise equal to the shipped defaults."""
    return simulate_flight(Scenario(seed=11))


@pytest.fixture(scope="session")
def constant_window(constant_flight):
    m = constant_flight.measured
    return m.window(extract_landing_window(m))
