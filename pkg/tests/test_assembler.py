import numpy as np
import pytest

from assembler import (COMPONENT_NAMES, ColumnGrid, CutoffProfile, TerrainField, assemble_approx,
                       divergence_corrector, layer_coordinate, make_cutoff)
from errors import CorrectorSupportError, GridError
from profiles import Side
from spectral import PeriodicGrid


def test_cutoff_profile_is_a_smooth_step() -> None:
    """
    chi is 0 below 1/2, 1 above 3/2, monotone in between, with vanishing end derivatives.
    """
    cutoff = make_cutoff()
    zeta = np.linspace(0.0, 2.0, 401)
    chi = cutoff(zeta)
    assert np.all(chi[zeta <= 0.5] == 0.0) and np.all(chi[zeta >= 1.5] == 1.0)
    assert np.all(np.diff(chi) >= -1e-15)
    assert cutoff(1.0) == pytest.approx(0.5)
    for n in (1, 2, 3):
        assert abs(cutoff.derivative(0.5 + 1e-12, n)) < 1e-8
        assert abs(cutoff.derivative(1.5 - 1e-12, n)) < 1e-8
    # chi' integrates to one
    column = ColumnGrid(0.05)
    assert column.integrate(cutoff.derivative(column.nodes, 1)) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        CutoffProfile(1)


def test_column_grid_is_symmetric_and_exact() -> None:
    column = ColumnGrid(0.05, n_wall=16, n_core=12)
    z = column.nodes
    assert z[0] == 0.0 and z[-1] == pytest.approx(2.0)
    assert np.allclose(z + z[::-1], 2.0)
    assert column.integrate(z ** 2) == pytest.approx(8.0 / 3.0)
    assert np.allclose(column.head(np.cos(z)), np.sin(z), atol=1e-12)
    assert np.allclose(column.differentiate(np.sin(z)), np.cos(z), atol=1e-8)


def test_layer_coordinate_on_both_walls() -> None:
    zeta = np.array([0.0, 1.0, 2.0])
    delta = np.full((1, 1), 0.01)
    assert np.allclose(layer_coordinate(zeta, delta, Side.bottom)[0, 0], [0.0, 100.0, 200.0])
    assert np.allclose(layer_coordinate(zeta, delta, Side.top)[0, 0], [200.0, 100.0, 0.0])


def test_corrector_needs_interior_support(egg_geometry) -> None:
    """
    A defect that reaches the walls cannot be corrected.
    """
    column = ColumnGrid.for_geometry(egg_geometry, 28.0, 32)
    defect = np.ones((16, 16, column.size))
    with pytest.raises(CorrectorSupportError):
        divergence_corrector(defect, egg_geometry, column)


def test_corrector_removes_a_core_defect(egg_geometry) -> None:
    """
    V has divergence equal to a mean free core defect and vanishes on the walls.
    """
    column = ColumnGrid.for_geometry(egg_geometry, 28.0, 32)
    cutoff = CutoffProfile()
    grid = egg_geometry.grid
    shape = cutoff.derivative(column.nodes, 1) * (column.nodes - 1.0)
    defect = (np.sin(grid.X) * np.cos(grid.Y))[..., np.newaxis] * (shape + cutoff.derivative(column.nodes, 1))
    corrector = divergence_corrector(defect, egg_geometry, column, cutoff)
    assert corrector.compatibility_residual < 1e-12
    assert corrector.divergence_residual < 1e-8
    wall = corrector.velocity.value[..., [0, -1]]
    assert np.abs(wall).max() < 1e-10 * np.abs(defect).max()


def test_assembled_solution_meets_its_constraints(egg_state, small_axis) -> None:
    """
    U_app vanishes on both walls and is divergence free up to rounding after the corrector.
    """
    approx = assemble_approx(egg_state, axis=small_axis, nzeta=32)
    assert set(approx.components) == set(COMPONENT_NAMES)
    assert approx.rate is not None
    assert approx.boundary_residual() < 1e-6
    assert approx.divergence_residual() < 1e-6
    assert approx.corrector.divergence_residual < 1e-6

    norms = approx.component_norms()
    assert norms["mean"] > norms["layer"] > 0.0
    columns, rows = approx.summary_rows()
    assert columns == ["quantity", "value"]
    assert dict((r[0], r[1]) for r in rows)["epsilon"] == pytest.approx(1e-2)


def test_distance_to_limit_shrinks_with_epsilon(egg_state, small_axis) -> None:
    """
    The layers get thinner, so ||U_app - u|| drops roughly like sqrt(eps).
    """
    coarse = assemble_approx(egg_state, epsilon=4e-2, axis=small_axis, nzeta=32, with_rate=False)
    fine = assemble_approx(egg_state, epsilon=1e-2, axis=small_axis, nzeta=32, with_rate=False)
    assert fine.rate is None
    ratio = coarse.distance_to_limit() / fine.distance_to_limit()
    assert 1.5 < ratio < 2.5


def test_zero_flow_gives_zero_fields(egg_geometry, small_axis) -> None:
    from limit2d import LimitState, LimitSystem

    state = LimitState(LimitSystem(egg_geometry), np.zeros((2, 16, 16)))
    approx = assemble_approx(state, axis=small_axis, nzeta=32)
    assert np.abs(approx.velocity.value).max() == 0.0
    assert approx.distance_to_limit() == 0.0


def test_mismatched_grids_are_rejected(egg_state, small_axis) -> None:
    from geometry import build_surface, derive_geometry

    other = derive_geometry(build_surface("flat", None, PeriodicGrid(32, 32)), 1e-2, 0.1)
    with pytest.raises(GridError):
        assemble_approx(egg_state, geometry=other, axis=small_axis)


def test_terrain_field_algebra() -> None:
    field = TerrainField.uniform(np.ones((2, 2)), 5)
    assert field.shape == (2, 2, 5)
    assert np.all(field.d_zeta == 0.0)
    doubled = (field + field).scaled(0.5)
    assert np.allclose(doubled.value, field.value)
    blended = field.times_profile(np.linspace(0, 1, 5), np.ones(5), np.zeros(5))
    assert np.allclose(blended.d_zeta, 1.0)
