import sys

import numpy as np
import pytest

from mrts.tps import LocationSet


def random_locs(n, d, seed=0):
    rng = np.random.default_rng(seed)
    return LocationSet(rng.uniform(size=(n, d)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def locs2d():
    return random_locs(30, 2, seed=1)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(results[key])
