import numpy as np
import pytest

from beliefcover import generators as G


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model(rng):
    return G.random_dense(3, 2, 2, rng, gamma=0.8)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[cid])
