import math

import numpy as np
import pytest

from conesheet.ansatz import sample_ansatz
from conesheet.geometry import ConeParams, PolarGrid

M0 = 0.5


@pytest.fixture(scope="session")
def params6():
    return ConeParams(M0, 2.0**-6)


@pytest.fixture(scope="session")
def ansatz_fine(params6):
    """Rotationally symmetric ansatz on a fine radial grid (spectral theta is exact)."""
    grid = PolarGrid.for_thickness(params6.h, 4096, 16)
    return sample_ansatz(grid, params6)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def cone_target(m0: float) -> float:
    return 2.0 * math.pi * (1.0 - m0)


@pytest.fixture(scope="session")
def ansatz_fan6(ansatz_fine, params6):
    from conesheet.geodesics import ChartField, shoot_fan
    return shoot_fan(ChartField.from_immersion(ansatz_fine), params6)
