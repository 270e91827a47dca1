import numpy as np
import pytest

from klreg.grid import make_uniform_grid
from klreg.scenarios import preset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_grid():
    return make_uniform_grid(0.0, 1.0, 64)


@pytest.fixture(scope="session")
def sc3_kl():
    return preset("sc3_kl")


@pytest.fixture(scope="session")
def sc3_quadratic():
    return preset("sc3_quadratic")


@pytest.fixture(scope="session")
def sc1_only():
    return preset("sc1_only")


@pytest.fixture(scope="session")
def scaling_q2():
    return preset("scaling_q2")


@pytest.fixture(scope="session")
def is_sc4():
    return preset("is_sc4")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        name, passed, detail = RESULTS[num]
        terminalreporter.write_line(
            f"criterion {num:2d}  {'PASS' if passed else 'FAIL'}  {name}: {detail}")
