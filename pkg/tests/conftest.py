import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from geometry import build_surface, derive_geometry
from limit2d import InitialPreset, LimitState, LimitSystem, make_initial_data
from profiles import StretchedAxis
from spectral import PeriodicGrid

NU = 0.1


@pytest.fixture
def grid16() -> PeriodicGrid:
    return PeriodicGrid(16, 16)


@pytest.fixture
def flat_geometry(grid16):
    return derive_geometry(build_surface("flat", None, grid16), 1e-2, NU)


@pytest.fixture
def egg_geometry(grid16):
    return derive_geometry(build_surface("eggcarton", {"amp": 0.05}, grid16), 1e-2, NU)


def taylor_green_state(geometry, amplitude: float = 0.5) -> LimitState:
    data = make_initial_data(geometry.grid, InitialPreset.taylor_green, geometry.nu, amplitude)
    return LimitState(LimitSystem(geometry), data.u)


@pytest.fixture
def flat_state(flat_geometry) -> LimitState:
    return taylor_green_state(flat_geometry)


@pytest.fixture
def egg_state(egg_geometry) -> LimitState:
    return taylor_green_state(egg_geometry)


@pytest.fixture
def small_axis() -> StretchedAxis:
    return StretchedAxis(z_max=28.0, n_nodes=128)
