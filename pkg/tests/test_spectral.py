import numpy as np
import pytest

from spectral import ChebyshevInterval, PeriodicGrid, is_power_of_two, relative_divergence


def test_grid_rejects_bad_sizes() -> None:
    """
    Grids must be powers of two of at least 8 points with positive lengths.
    """
    assert is_power_of_two(8) and is_power_of_two(64)
    assert not is_power_of_two(4) and not is_power_of_two(100)
    with pytest.raises(ValueError):
        PeriodicGrid(100, 16)
    with pytest.raises(ValueError):
        PeriodicGrid(16, 16, lx=-1.0)


def test_derivatives_of_trigonometric_fields(grid16) -> None:
    """
    Spectral derivatives of band-limited fields are exact to rounding.
    """
    f = np.sin(grid16.X) * np.cos(2 * grid16.Y)
    assert np.allclose(grid16.ddx(f), np.cos(grid16.X) * np.cos(2 * grid16.Y), atol=1e-12)
    assert np.allclose(grid16.ddy(f), -2 * np.sin(grid16.X) * np.sin(2 * grid16.Y), atol=1e-12)
    assert np.allclose(grid16.laplacian(f), -5 * f, atol=1e-12)
    assert np.allclose(grid16.inverse_laplacian(-5 * f), f, atol=1e-12)


def test_inverse_laplacian_drops_the_mean(grid16) -> None:
    phi = grid16.inverse_laplacian(np.cos(grid16.X) + 3.0)
    assert abs(grid16.mean(phi)) < 1e-14
    assert np.allclose(phi, -np.cos(grid16.X), atol=1e-12)


def test_leray_projection_is_divergence_free(grid16) -> None:
    """
    The projection removes the gradient part and keeps the mean.
    """
    rng = np.random.default_rng(1)
    fx = grid16.dealias(rng.standard_normal((16, 16))) + 0.3
    fy = grid16.dealias(rng.standard_normal((16, 16)))
    px, py = grid16.leray_project(fx, fy)
    assert relative_divergence(grid16, px, py) < 1e-12
    assert np.isclose(grid16.mean(px), grid16.mean(fx))

    gx, gy = grid16.gradient(np.sin(grid16.X + grid16.Y))
    qx, qy = grid16.leray_project(gx, gy)
    assert np.abs(qx).max() < 1e-12 and np.abs(qy).max() < 1e-12


def test_dealias_keeps_the_two_thirds_band(grid16) -> None:
    """
    On 16 points, mode 5 survives the 2/3 rule and mode 6 is removed.
    """
    kept = np.cos(5 * grid16.X)
    removed = np.cos(6 * grid16.X)
    assert np.allclose(grid16.dealias(kept), kept, atol=1e-12)
    assert np.abs(grid16.dealias(removed)).max() < 1e-12


def test_l2_norm_and_integral(grid16) -> None:
    assert np.isclose(grid16.integrate(np.ones((16, 16))), 4 * np.pi ** 2)
    assert np.isclose(grid16.l2_norm(np.sin(grid16.X)), np.sqrt(2) * np.pi)


def test_chebyshev_calculus() -> None:
    """
    Integration, head integrals and differentiation of a smooth function on [0, 2].
    """
    interval = ChebyshevInterval(0.0, 2.0, 24)
    z = interval.nodes
    assert z[0] == pytest.approx(0.0) and z[-1] == pytest.approx(2.0)
    assert np.all(np.diff(z) > 0)

    f = np.exp(-z) * np.cos(3 * z)
    antiderivative = np.exp(-z) * (3 * np.sin(3 * z) - np.cos(3 * z)) / 10.0
    assert interval.integrate(f) == pytest.approx(antiderivative[-1] - antiderivative[0], abs=1e-10)
    assert np.allclose(interval.head(f), antiderivative - antiderivative[0], atol=1e-10)
    assert np.allclose(interval.tail(f), antiderivative[-1] - antiderivative, atol=1e-10)
    assert np.allclose(interval.differentiate(f), -np.exp(-z) * (np.cos(3 * z) + 3 * np.sin(3 * z)), atol=1e-7)

    with pytest.raises(ValueError):
        ChebyshevInterval(1.0, 0.0, 8)
