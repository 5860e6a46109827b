import numpy as np
import pytest

from errors import GridError, SurfaceError
from field_io import write_sampled_surface
from geometry import (CORIOLIS, CURVATURE_THRESHOLD, AdmissibilityMode, AnalyticSurface, SurfacePreset,
                      build_surface, check_admissibility, derive_geometry, derive_geometry_at, local_frame,
                      rotated_coriolis)
from spectral import PeriodicGrid


def test_flat_surface_geometry(flat_geometry) -> None:
    """
    A flat bottom has no slope or curvature and the layer thickness sqrt(nu) eps.
    """
    assert flat_geometry.is_flat()
    assert np.all(flat_geometry.cos_gamma == 1.0)
    assert np.all(flat_geometry.K_G == 0.0) and np.all(flat_geometry.K_A == 0.0)
    assert np.allclose(flat_geometry.delta, np.sqrt(0.1) * 1e-2)
    assert np.allclose(flat_geometry.damping_coefficient, np.sqrt(0.05))


def test_spectral_derivatives_match_closed_form(egg_geometry) -> None:
    """
    The eggcarton is resolved exactly, so spectral and closed-form geometry agree.
    """
    exact = derive_geometry(egg_geometry.surface, 1e-2, 0.1, exact=True)
    for name in ("Bx", "By", "Bxx", "Bxy", "Byy", "cos_gamma", "K_G", "K_A"):
        assert np.allclose(getattr(egg_geometry, name), getattr(exact, name), atol=1e-12), name


def test_metric_identities(egg_geometry) -> None:
    """
    det H0 cos^2(g) = 1 and the unit normal has length one.
    """
    assert np.allclose(egg_geometry.det_H0 * egg_geometry.cos_gamma ** 2, 1.0, atol=1e-14)
    assert np.allclose(np.sum(egg_geometry.normal_vector() ** 2, axis=0), 1.0, atol=1e-14)
    assert np.allclose(egg_geometry.delta, egg_geometry.delta_n / egg_geometry.cos_gamma)


def test_paraboloid_pointwise_oracle() -> None:
    """
    For B = (x^2 + y^2) / 2: K_G = (1 + r^2)^-2 and 2 K_A = (2 + r^2) (1 + r^2)^-3/2.
    """
    surface = AnalyticSurface(SurfacePreset.paraboloid, None, 1.0, 1.0)
    x, y = np.array([0.0, 0.3, -0.7]), np.array([0.0, -0.2, 0.4])
    bundle = derive_geometry_at(surface, x, y, 1e-2, 0.1)
    r2 = x ** 2 + y ** 2
    assert np.allclose(bundle.cos_gamma, 1.0 / np.sqrt(1.0 + r2))
    assert np.allclose(bundle.K_G, (1.0 + r2) ** -2)
    assert np.allclose(bundle.K_A, 0.5 * (2.0 + r2) * (1.0 + r2) ** -1.5)


def test_local_frame_is_a_rotation(egg_geometry) -> None:
    """
    The frame is orthogonal, takes the normal to e3 and keeps the Coriolis matrix skew.
    """
    i, j = 3, 5
    frame = local_frame(egg_geometry, (i, j))
    assert np.allclose(frame @ frame.T, np.eye(3), atol=1e-14)
    assert np.allclose(frame @ egg_geometry.normal_vector()[:, i, j], [0.0, 0.0, 1.0], atol=1e-14)
    rotated = rotated_coriolis(frame)
    assert np.allclose(rotated, -rotated.T, atol=1e-14)

    flat_frame = local_frame(derive_geometry(build_surface("flat", None, egg_geometry.grid), 1e-2, 0.1), (0, 0))
    assert np.allclose(rotated_coriolis(flat_frame), CORIOLIS)
    with pytest.raises(ValueError):
        local_frame(egg_geometry, (16, 0))


def test_admissibility_of_flat_and_gentle_surfaces(flat_geometry, egg_geometry) -> None:
    """
    Flat passes with zero worst values; the default eggcarton passes both modes.
    """
    report = check_admissibility(flat_geometry)
    assert report.verdict
    assert all(c.worst == 0.0 for c in report.conditions)

    assert check_admissibility(egg_geometry).verdict
    assert check_admissibility(egg_geometry, AdmissibilityMode.nearly_flat, sigma=0.25).verdict


def test_admissibility_reports_offending_conditions(grid16) -> None:
    """
    A tall eggcarton breaks the height and curvature conditions, and a margin
    tightens every threshold.
    """
    tall = derive_geometry(build_surface("eggcarton", {"amp": 0.5}, grid16), 1e-2, 0.1)
    report = check_admissibility(tall)
    assert not report.verdict
    names = [c.name for c in report.offending()]
    assert any(name.startswith("height") for name in names)
    assert any(name.startswith("curvature") for name in names)
    assert report.conditions[-1].threshold == CURVATURE_THRESHOLD

    gentle = derive_geometry(build_surface("eggcarton", {"amp": 0.05}, grid16), 1e-2, 0.1)
    assert not check_admissibility(gentle, margin=0.24).verdict
    with pytest.raises(ValueError):
        check_admissibility(gentle, margin=-1.0)


def test_unknown_and_non_periodic_presets(grid16) -> None:
    with pytest.raises(SurfaceError):
        build_surface("volcano", None, grid16)
    with pytest.raises(SurfaceError):
        build_surface("tilt", None, grid16)
    with pytest.raises(SurfaceError):
        build_surface("eggcarton", {"height": 1.0}, grid16)
    tilt = build_surface("tilt", {"a": 0.1}, grid16, oracle=True)
    assert np.allclose(derive_geometry(tilt, 1e-2, 0.1).Bx, 0.1)


def test_sampled_surface_files(tmp_path, grid16) -> None:
    """
    A periodic sample file is accepted; a ramp is rejected with the edge location;
    a file on another grid is a grid error.
    """
    good = tmp_path / "good.txt"
    samples = 0.05 * np.cos(grid16.X) * np.sin(grid16.Y)
    write_sampled_surface(str(good), grid16.lx, grid16.ly, samples)
    surface = build_surface(str(good), None, grid16)
    assert np.allclose(surface.samples, samples)
    assert surface.analytic is None

    ramp = tmp_path / "ramp.txt"
    write_sampled_surface(str(ramp), grid16.lx, grid16.ly, 0.01 * grid16.X)
    with pytest.raises(SurfaceError) as raised:
        build_surface(str(ramp), None, grid16)
    assert raised.value.location is not None

    with pytest.raises(GridError):
        build_surface(str(good), None, PeriodicGrid(32, 32))
