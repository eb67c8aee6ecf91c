import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from srsw_calib import GridSpec, PhysicalParams
from srsw_calib.grid import state_from_arrays


@pytest.fixture
def small_grid():
    return GridSpec(Lx=1000e3, Ly=500e3, Nx=16, Ny=8)


@pytest.fixture
def params():
    return PhysicalParams()


@pytest.fixture
def rng():
    return np.random.default_rng(20240612)


def random_state(grid, rng, amp_v=0.5, amp_e=5.0, time=0.0):
    """Random but wall-respecting model state."""
    u = rng.normal(0.0, amp_v, grid.shape)
    v = rng.normal(0.0, amp_v, grid.shape)
    v[:, 0] = 0.0
    v[:, -1] = 0.0
    eta = rng.normal(0.0, amp_e, grid.shape)
    return state_from_arrays(grid, u, v, eta, time=time)


@pytest.fixture
def make_random_state(rng):
    def factory(grid, **kw):
        return random_state(grid, rng, **kw)

    return factory
