import numpy as np
import pytest

from errors import QuadratureError
from limit2d import vorticity
from profiles import (A, DiagonalizationPack, FlowSnapshot, LayerKernel, LayerSeries, Side, StretchedAxis,
                      build_layer_profiles, closed_form_pack, interior_order1, layer_equation_residual,
                      profile_dump, profile_order0, quadrature_audit)


def test_spiral_series_matches_its_formula() -> None:
    """
    A spiral series evaluates to exp(-A xi) (cos(A xi) a + sin(A xi) b), and its xi
    derivative and tail integral agree with finite differences and quadrature.
    """
    a, b = np.array([1.0, -0.5]), np.array([0.25, 2.0])
    series = LayerSeries.spiral(a, b)
    xi = np.linspace(0.0, 10.0, 2001)
    expected = np.exp(-A * xi) * (np.cos(A * xi) * a[:, None] + np.sin(A * xi) * b[:, None])
    assert np.allclose(series.real(xi), expected, atol=1e-14)

    slope = np.gradient(expected, xi, axis=-1)
    assert np.allclose(series.d_xi().real(xi)[:, 1:-1], slope[:, 1:-1], atol=1e-4)

    assert np.allclose(series.at_zero().real, a)
    tail = series.tail().real(np.array([0.0]))[:, 0]
    axis = StretchedAxis(z_max=40.0, n_nodes=128)
    assert np.allclose(tail, axis.integrate(series.real(axis.nodes)), atol=1e-10)


def test_series_algebra() -> None:
    """
    head + tail is the full integral, and xi powers differentiate by the product rule.
    """
    series = LayerSeries.exponential(np.array(1.0 + 0.5j), (1, -1)).times_xi()
    xi = np.array([0.0, 0.7, 3.0])
    total = series.tail().evaluate(np.array([0.0]))[0]
    assert np.allclose(series.head().evaluate(xi) + series.tail().evaluate(xi), total)

    rho = A * complex(1, -1)
    expected = (1.0 + 0.5j) * np.exp(-rho * xi) * (1.0 - rho * xi)
    assert np.allclose(series.d_xi().evaluate(xi), expected)
    with pytest.raises(ValueError):
        LayerSeries({(0, 0, 1): np.array(1.0)}).tail()


def test_stretched_axis_rejects_short_domains() -> None:
    with pytest.raises(ValueError):
        StretchedAxis(z_max=5.0)
    axis = StretchedAxis(n_nodes=64)
    with pytest.raises(QuadratureError):
        axis.check_tail(np.ones(axis.nodes.size), "constant")
    axis.check_tail(np.exp(-axis.nodes), "decaying")


def test_diagonalization_audit(egg_geometry) -> None:
    """
    The closed-form eigenvectors pass the audit; a broken pair falls back to the
    numerical eigendecomposition.
    """
    pack = DiagonalizationPack(egg_geometry)
    assert not pack.fallback
    assert pack.residual < 1e-10

    q, q_inv = closed_form_pack(egg_geometry)
    broken = DiagonalizationPack(egg_geometry, closed_form=(2.0 * q, q_inv))
    assert broken.fallback
    assert broken.closed_form_residual > 0.5
    assert broken.residual < 1e-10


def test_profiles_match_the_interior_at_the_wall(egg_state, small_axis) -> None:
    """
    Every order cancels its interior counterpart at xi = 0 on both walls.
    """
    for side in Side:
        profiles = build_layer_profiles(egg_state, egg_state.geometry, side, small_axis)
        mismatch = profiles.wall_mismatch()
        assert mismatch["order0_h"] < 1e-12
        assert mismatch["order1_h"] < 1e-10
        assert mismatch["order2_3"] < 1e-10


def test_order1_layer_equation_residual(egg_state, small_axis) -> None:
    """
    The green kernel solves H0 U'' + sec(g) E1 U = rhs to rounding.
    """
    flow = FlowSnapshot.from_state(egg_state)
    pack = DiagonalizationPack(egg_state.geometry)
    profiles = build_layer_profiles(flow, egg_state.geometry, Side.bottom, small_axis, pack=pack)
    assert layer_equation_residual(profiles, flow, egg_state.geometry, pack) < 1e-6


def test_convolution_kernel_keeps_the_wall_value(egg_state, small_axis) -> None:
    profiles = build_layer_profiles(egg_state, egg_state.geometry, Side.bottom, small_axis,
                                    kernel=LayerKernel.convolution)
    assert profiles.kernel == LayerKernel.convolution
    assert profiles.wall_mismatch()["order1_h"] < 1e-10


def test_quadrature_audit_and_dump(egg_state, small_axis) -> None:
    """
    Closed-form tail integrals agree with the axis quadrature, and the profile dump
    has one row per axis node.
    """
    profiles = build_layer_profiles(egg_state, egg_state.geometry, Side.top, small_axis)
    assert quadrature_audit(profiles.order0.horizontal, small_axis) < 1e-6
    assert quadrature_audit(profiles.order1.vertical, small_axis) < 1e-6

    columns, rows = profile_dump(profiles, (2, 3))
    assert columns[0] == "z_tilde" and "U0_1" in columns
    assert len(rows) == small_axis.nodes.size
    assert rows[0][0] == pytest.approx(0.0)
    # the leading spiral starts at -u
    assert rows[0][1] == pytest.approx(-egg_state.u[0, 2, 3], abs=1e-12)


def test_flat_interior_correction(flat_state) -> None:
    """
    Over flat ground the order-1 interior flow is A (E1 u + u) and its vertical part
    falls linearly from A omega at the bottom to zero at mid channel.
    """
    u, geometry = flat_state.u, flat_state.system.geometry
    horizontal, vertical = interior_order1(u, geometry, 0.5)
    assert np.max(np.abs(horizontal - A * (np.array([u[1], -u[0]]) + u))) < 1e-12
    omega = vorticity(geometry.grid, u)
    assert np.max(np.abs(vertical - 0.5 * A * omega)) < 1e-10
    assert np.max(np.abs(interior_order1(u, geometry).vertical(1.0))) < 1e-12


def test_order0_profiles_cancel_the_flow_at_both_walls(egg_state) -> None:
    geometry = egg_state.system.geometry
    for side in Side:
        profiles = profile_order0(egg_state.u, geometry, side)
        assert np.max(np.abs(profiles.horizontal.at_zero() + egg_state.u)) < 1e-12
