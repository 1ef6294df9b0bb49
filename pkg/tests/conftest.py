import math
import warnings

import pytest

from cntqi.core import NodeParams, TimeGrid, gaussian_envelope, gaussian_window
from cntqi.dynamics import default_step

# Gaussian width used by the reference scenarios, in us^-2
GAMMA_FIG = 0.15 * math.pi * math.sqrt(2.0)

# acceptance verdicts collected by tests/test_acceptance.py
ACCEPTANCE = {}


def emission_node(lossy=True):
    if lossy:
        return NodeParams.from_mhz(5.0, 1.3, gamma_q=0.01, gamma_r=0.0026, gamma_c=0.0025)
    return NodeParams.from_mhz(5.0, 1.3)


def target_grid(params_list, Gamma=GAMMA_FIG, t0=0.0, factor=0.01):
    rates = []
    for p in params_list:
        rates += [p.gamma, abs(p.G), p.gamma_q]
    a, b = gaussian_window(Gamma, t0)
    grid = TimeGrid.from_step(a, b, default_step(rates, factor))
    return grid, gaussian_envelope(grid, Gamma, t0)


@pytest.fixture
def node_lossless():
    p = emission_node(False)
    grid, target = target_grid([p])
    return p, grid, target


@pytest.fixture
def node_lossy():
    p = emission_node(True)
    grid, target = target_grid([p])
    return p, grid, target


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
