import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nmmonitor.kernel import CouplingKernel
from nmmonitor.lattice import CollisionModel, LatticeConfig, SystemSpec

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def qubit():
    return SystemSpec.qubit_decay(rabi=1.0)


@pytest.fixture
def plus_state():
    return np.array([1.0, 1.0]) / np.sqrt(2)


@pytest.fixture
def exp_model(qubit):
    dt = 0.1
    return CollisionModel(qubit, CouplingKernel.exponential(1.0, 2.0, dt, 3), LatticeConfig(dt, 3, 2))


@pytest.fixture
def markov_model(qubit):
    dt = 0.01
    return CollisionModel(qubit, CouplingKernel.markov(1.0, dt), LatticeConfig(dt, 1, 2))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
