import numpy as np
import pytest

from cgl_lab.dynamics import CglParams
from cgl_lab.spectral import make_grid, make_mask


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid1():
    return make_grid(1, 32)


@pytest.fixture
def grid2():
    return make_grid(2, 16)


@pytest.fixture
def params1():
    return CglParams()


@pytest.fixture
def mask1(grid1):
    return make_mask(grid1)
