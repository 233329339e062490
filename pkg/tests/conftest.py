import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shocklab.model import EndstatePair, builtin_system
from shocklab.profile import rankine_hugoniot, solve_profile

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def iso():
    return builtin_system("isentropic_ns", {"gamma": 2.0, "nu": 1.0})


@pytest.fixture(scope="session")
def iso_shock(iso):
    Um = np.array([1.0, 0.0])
    Up, s = rankine_hugoniot(iso, Um, fixed={0: 0.5}, lax=True)
    return Um, Up, s


@pytest.fixture(scope="session")
def iso_endstates(iso, iso_shock):
    Um, Up, _ = iso_shock
    return EndstatePair.from_states(iso, Um, Up)


@pytest.fixture(scope="session")
def iso_profile(iso, iso_shock, iso_endstates):
    return solve_profile(iso, iso_endstates, iso_shock[2], L=20.0, N=2048)


@pytest.fixture(scope="session")
def ns():
    return builtin_system("full_ns", {"gamma": 1.4, "cv": 1.0, "nu": 1.0, "kappa": 1.0})


@pytest.fixture(scope="session")
def ns_shock(ns):
    Um = np.array([1.0, 0.0, 2.5])
    Up, s = rankine_hugoniot(ns, Um, fixed={0: 0.7}, lax=True)
    return Um, Up, s


@pytest.fixture(scope="session")
def acceptance():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
