import numpy as np
import pytest

from phs_mfem.assembly import assemble
from phs_mfem.model import ParamProfile, SystemSpec, constant_profile, make_piezo_preset, make_wave_preset


@pytest.fixture(scope="session")
def wave():
    return make_wave_preset()


@pytest.fixture(scope="session")
def piezo():
    return make_piezo_preset()


@pytest.fixture(scope="session")
def wave40(wave):
    return assemble(wave, 40, "mfem")


def linear_spec(n=1, x_l=0.0, x_r=1.0, K=1.0):
    """theta(x) = x + 1 on every parameter."""
    prof = ParamProfile(lambda x: x + 1.0, lambda x: np.ones_like(x), "x+1")
    return SystemSpec(n=n, x_l=x_l, x_r=x_r, A=np.eye(n), K=K * np.eye(n),
                      theta_q=(prof,) * n, theta_p=(prof,) * n, name="linear")


def unit_spec(n=1, K=1.0, A=None):
    ones = tuple(constant_profile(1.0) for _ in range(n))
    return SystemSpec(n=n, x_l=0.0, x_r=1.0, A=np.eye(n) if A is None else A, K=K * np.eye(n),
                      theta_q=ones, theta_p=ones)


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
