import sys

import numpy as np
import pytest

from phasedecoder.field import Grid2D
from phasedecoder.zernike import PupilGeometry

LAMBDA = 0.514
NA = 0.65


@pytest.fixture
def geo128():
    return PupilGeometry(Grid2D(128, 128, 0.1625, LAMBDA), NA)


@pytest.fixture
def geo32():
    return PupilGeometry(Grid2D(32, 32, 0.25, LAMBDA), NA)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance lines at the end of the run."""
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
