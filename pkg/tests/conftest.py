import numpy as np
import pytest

from robergo.ergodic import (
    ExplorationSpace,
    InfoDistribution,
    build_basis,
    info_coeffs,
)
from robergo.objective import CostParams
from robergo.systems import ControlBounds


@pytest.fixture(scope="session")
def unit_space():
    return ExplorationSpace(lengths=(1.0,))


@pytest.fixture(scope="session")
def basis6(unit_space):
    return build_basis(unit_space, modes_per_axis=6)


@pytest.fixture(scope="session")
def uniform_phi(unit_space, basis6):
    return info_coeffs(basis6, InfoDistribution(unit_space, "uniform"))


@pytest.fixture(scope="session")
def bimodal(unit_space):
    return InfoDistribution(
        unit_space,
        "gaussian-mixture",
        (((0.25,), 0.1, 0.5), ((0.75,), 0.1, 0.5)),
    )


@pytest.fixture(scope="session")
def bimodal_phi(basis6, bimodal):
    return info_coeffs(basis6, bimodal)


@pytest.fixture(scope="session")
def params():
    return CostParams()


@pytest.fixture(scope="session")
def bounds():
    return ControlBounds(u_max=5.0, d_max=2.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
