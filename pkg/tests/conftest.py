import numpy as np
import pytest

from cornerflow import metric_core as mc


@pytest.fixture(scope="session")
def hyp2():
    return mc.hyperbolic(2)


@pytest.fixture(scope="session")
def pert2():
    return mc.perturbed(2, amplitude=0.1, warp=0.2)


@pytest.fixture(scope="session")
def pert3():
    return mc.perturbed(3, amplitude=0.1, warp=0.2)


def loglog_slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
