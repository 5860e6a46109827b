import numpy as np
import pytest

from errors import CflViolationError, HorizonError
from limit2d import (InitialPreset, LimitState, LimitSystem, audit_vorticity_source, decay_diagnostics,
                     integrate_vorticity, limit_rhs, make_initial_data, simulate, step, velocity_from_vorticity,
                     vorticity, vorticity_sources)
from spectral import relative_divergence


def test_initial_data_is_divergence_free(grid16) -> None:
    """
    Every preset gives a divergence free flow of the requested amplitude.
    """
    for preset in InitialPreset:
        data = make_initial_data(grid16, preset, 0.1, amplitude=0.3, seed=4)
        assert relative_divergence(grid16, *data.u) < 1e-12
        assert data.u_linf == pytest.approx(0.3)
    assert make_initial_data(grid16, "taylor-green", 0.1, amplitude=0.1).small_data


def test_well_prepared_data_scales_the_vorticity(grid16) -> None:
    """
    Well prepared data have ||omega||_L2 = eps^sigma.
    """
    data = make_initial_data(grid16, InitialPreset.bump, 0.1, well_prepared=True, epsilon=1e-2, sigma=0.5)
    assert data.omega_l2 == pytest.approx(0.1)
    with pytest.raises(ValueError):
        make_initial_data(grid16, InitialPreset.bump, 0.1, well_prepared=True)


def test_tendency_is_projected_and_mean_free(egg_state) -> None:
    u_t = egg_state.tendency()
    grid = egg_state.grid
    assert relative_divergence(grid, *u_t) < 1e-12
    assert np.abs(grid.mean(u_t[0])) < 1e-14 and np.abs(grid.mean(u_t[1])) < 1e-14


def test_rotation_does_no_work(egg_state) -> None:
    """
    The sec(g) E1 term is pointwise orthogonal to u, and damping removes energy.
    """
    budget = egg_state.system.energy_budget(egg_state.u)
    assert abs(budget["rotation"]) < 1e-12
    assert budget["damping"] < 0.0


def test_flat_taylor_green_decays_at_the_exact_rate(flat_state) -> None:
    """
    Over a flat surface a Taylor-Green flow decays as exp(-sqrt(nu/2) t), so the
    energy rate is sqrt(2 nu).
    """
    trajectory = simulate(flat_state, 1.0, 0.01, stride=10)
    assert len(trajectory) == 11
    assert trajectory.times[-1] == pytest.approx(1.0)
    diagnostics = decay_diagnostics(trajectory)
    assert diagnostics.rate("energy") == pytest.approx(np.sqrt(2 * 0.1), rel=1e-6)
    assert diagnostics.rate("L2_u") == pytest.approx(np.sqrt(0.1 / 2), rel=1e-6)
    assert "Ls_u_4" in diagnostics.fits


def test_short_trajectories_cannot_be_fitted(flat_state) -> None:
    trajectory = simulate(flat_state, 0.05, 0.01)
    with pytest.raises(HorizonError):
        decay_diagnostics(trajectory)


def test_cfl_violation_names_the_bound(flat_state) -> None:
    with pytest.raises(CflViolationError) as raised:
        step(flat_state, 10.0)
    assert raised.value.required_dt < 10.0
    with pytest.raises(ValueError):
        simulate(flat_state, -1.0, 0.01)


def test_vorticity_form_agrees_with_velocity_form(egg_state) -> None:
    """
    Both formulations integrate the same dynamics over an admissible curved surface.
    """
    grid = egg_state.grid
    omega = integrate_vorticity(egg_state.system, egg_state.omega, 0.2, 0.01)
    u = simulate(egg_state, 0.2, 0.01).final.u
    reference = vorticity(grid, u)
    assert grid.l2_norm(omega - reference) / grid.l2_norm(reference) < 1e-6


def test_vorticity_source_audit(egg_state) -> None:
    assert audit_vorticity_source(egg_state.system, egg_state.u) < 1e-8


def test_explicit_sources_match_the_curl_of_the_damping(egg_state, flat_state) -> None:
    """
    The curvature and slope sources plus -c omega reproduce -curl(D u) over the eggcarton,
    and both sources vanish over flat ground.
    """
    system, grid, u = egg_state.system, egg_state.grid, egg_state.u
    curvature, slope = vorticity_sources(system, u)
    damping = system.damping(u)
    spectral = -grid.curl(damping[0], damping[1])
    explicit = -system.coefficient * vorticity(grid, u) + curvature + slope
    assert grid.l2_norm(explicit - spectral) / grid.l2_norm(spectral) < 1e-8
    # the curvature term carries a visible share of the source
    assert grid.l2_norm(curvature) > 1e-4 * grid.l2_norm(spectral)

    curvature, slope = vorticity_sources(flat_state.system, flat_state.u)
    assert np.abs(curvature).max() == 0.0
    assert np.abs(slope).max() == 0.0


def test_linear_system_keeps_the_flat_decay(flat_geometry) -> None:
    """
    Without advection a random flow over flat ground decays at sqrt(nu/2) exactly.
    """
    data = make_initial_data(flat_geometry.grid, InitialPreset.band_limited_random, 0.1, amplitude=0.2, seed=3)
    state = LimitState(LimitSystem(flat_geometry, advection=False), data.u)
    trajectory = simulate(state, 1.0, 0.02, stride=5)
    assert decay_diagnostics(trajectory).rate("L2_u") == pytest.approx(np.sqrt(0.05), rel=1e-6)


def test_velocity_from_vorticity(egg_state) -> None:
    grid = egg_state.grid
    u = velocity_from_vorticity(grid, egg_state.omega)
    assert np.max(np.abs(u - egg_state.u)) < 1e-12
    shifted = velocity_from_vorticity(grid, egg_state.omega, np.array([0.1, -0.2]))
    assert grid.mean(shifted[0]) == pytest.approx(0.1) and grid.mean(shifted[1]) == pytest.approx(-0.2)
    with pytest.raises(ValueError):
        velocity_from_vorticity(grid, egg_state.omega + 1.0)


def test_pressure_closes_the_tendency(egg_state) -> None:
    """
    u_t = -(forcing) - grad p - G, with G the uniform gradient balancing the mean forcing.
    """
    system, u, grid = egg_state.system, egg_state.u, egg_state.grid
    p, _, uniform = system.pressure(u)
    forcing = system.nonlinear(u, u) + system.damping(u)
    rebuilt = -forcing - np.array([grid.ddx(p), grid.ddy(p)]) - uniform[:, np.newaxis, np.newaxis]
    assert np.max(np.abs(limit_rhs(egg_state) - rebuilt)) < 1e-12
