from __future__ import annotations

import numpy as np
import pytest

from delaybellman.ddesim import fundamental_matrix
from delaybellman.sysmodel import ClosedLoopSystem, ControlLaw, CostWeights, SystemModel, ThetaGrid, close_loop


def scalar_free(n_theta: int = 32) -> ClosedLoopSystem:
    """x' = -x."""
    return ClosedLoopSystem.from_matrices([[-1.0]], [[0.0]], "zero", 1.0, n_theta)


def scalar_delay(n_theta: int = 32) -> ClosedLoopSystem:
    """x' = -0.5 x(t-1)."""
    return ClosedLoopSystem.from_matrices([[0.0]], [[-0.5]], "zero", 1.0, n_theta)


def distributed_system(n_theta: int = 32) -> SystemModel:
    E = np.array([[0.3, 0.0], [0.1, -0.2]])
    return SystemModel.build([[-2.0, 0.5], [0.3, -1.5]], [[0.2, -0.1], [0.0, 0.3]], [[1.0], [0.5]], 1.0,
                             E, n_theta)


def distributed_law(sys: SystemModel) -> ControlLaw:
    return ControlLaw.build([[-0.5, -0.2]], [[0.1, 0.0]], sys)


def distributed(n_theta: int = 32) -> ClosedLoopSystem:
    sys = distributed_system(n_theta)
    return close_loop(sys, distributed_law(sys))


TEST_SYSTEMS = {"free": scalar_free, "delay": scalar_delay, "distributed": distributed}


@pytest.fixture(scope="session")
def systems():
    """Closed loops and their fundamental matrices at the default step ``h/128``."""
    out = {}
    for name, make in TEST_SYSTEMS.items():
        cl = make()
        out[name] = (cl, fundamental_matrix(cl))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
