import warnings

import numpy as np
import pytest

from meshlight.compact_model import PhysicalConstants
from meshlight.errors import IllConditionedWarning


@pytest.fixture(autouse=True)
def _quiet_conditioning():
    # random meshes regularly trip the conditioning warning; tests check numbers instead
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IllConditionedWarning)
        yield


@pytest.fixture
def consts():
    return PhysicalConstants()


@pytest.fixture
def omega0(consts):
    return consts.omega_center


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria append (name, passed, detail) here; printed after the run
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
