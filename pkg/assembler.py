from __future__ import annotations

import logging
from math import comb

import numpy as np

from errors import CorrectorSupportError, GridError
from geometry import CHANNEL_HEIGHT, GeometryBundle
from limit2d import LimitState, speed
from profiles import (DiagonalizationPack, FlowSnapshot, LayerKernel, LayerProfileSet, LayerSeries, Side,
                      StretchedAxis, build_layer_profiles)
from spectral import ChebyshevInterval, PeriodicGrid

logger = logging.getLogger(__name__)

SUPPORT_MARGIN = 0.25          # the corrector needs the defect to vanish this close to the walls
COMPONENT_NAMES = ("mean", "interior1", "layer", "corrector")


class CutoffProfile:
    """
    The smoothstep chi(zeta): 0 on [0, 1/2], 1 on [3/2, 2], a polynomial of degree
    2 order + 1 in between whose first `order` derivatives vanish at both ends.
    """

    order: int
    start: float = 0.5
    end: float = 1.5

    def __init__(self, order: int = 3) -> None:
        try:
            assert int(order) == order and order >= 2
        except AssertionError:
            raise ValueError(f"cutoff order must be an integer >= 2, got {order}")
        self.order = int(order)
        n = self.order
        coeffs = [0.0] * (n + 1) + [comb(n + k, k) * comb(2 * n + 1, n - k) * (-1) ** k for k in range(n + 1)]
        self.polynomial = np.polynomial.Polynomial(coeffs)

    def __str__(self) -> str:
        return f"CutoffProfile (order {self.order} smoothstep on [{self.start:g}, {self.end:g}])"

    def derivative(self, zeta: np.ndarray | float, n: int = 1) -> np.ndarray:
        """
        Returns the n-th derivative of chi at zeta (n = 0 gives chi itself).
        """
        zeta = np.asarray(zeta, dtype=float)
        width = self.end - self.start
        t = (zeta - self.start) / width
        poly = self.polynomial.deriv(n) if n else self.polynomial
        inside = poly(np.clip(t, 0.0, 1.0)) / width ** n
        if n == 0:
            return np.where(t <= 0.0, 0.0, np.where(t >= 1.0, 1.0, inside))
        return np.where((t <= 0.0) | (t >= 1.0), 0.0, inside)

    def __call__(self, zeta: np.ndarray | float) -> np.ndarray:
        return self.derivative(zeta, 0)

    def profile(self, zeta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Returns (chi, chi', chi'') at zeta.
        """
        return self(zeta), self.derivative(zeta, 1), self.derivative(zeta, 2)


def make_cutoff(order: int = 3) -> CutoffProfile:
    return CutoffProfile(order)


class ColumnGrid:
    """
    The vertical grid zeta in [0, 2]: Chebyshev segments [0, d], [d, 1/2], [1/2, 3/2],
    [3/2, 2 - d], [2 - d, 2] with d the layer depth, mirror symmetric about zeta = 1.
    Integration and differentiation are spectral on each segment.
    """

    layer_depth: float
    segments: list[ChebyshevInterval]
    nodes: np.ndarray
    weights: np.ndarray
    head_matrix: np.ndarray
    derivative_matrix: np.ndarray

    def __init__(self, layer_depth: float, n_wall: int = 32, n_core: int = 12) -> None:
        try:
            assert layer_depth > 0 and n_wall >= 4 and n_core >= 4
        except AssertionError:
            raise ValueError(f"column grid needs a positive layer depth and >= 4 nodes per segment, "
                             f"got {layer_depth}, {n_wall}, {n_core}")
        d = min(float(layer_depth), SUPPORT_MARGIN)
        self.layer_depth = d
        breaks = [0.0, d, 0.5, 1.5, CHANNEL_HEIGHT - d, CHANNEL_HEIGHT]
        sizes = [n_wall, n_core, n_core, n_core, n_wall]
        self.segments = [ChebyshevInterval(a, b, n) for a, b, n in zip(breaks[:-1], breaks[1:], sizes)]

        offsets = np.cumsum([0] + [s.n for s in self.segments])
        size = offsets[-1] + 1
        self.nodes = np.zeros(size)
        self.weights = np.zeros(size)
        self.head_matrix = np.zeros((size, size))
        self.derivative_matrix = np.zeros((size, size))
        counts = np.zeros(size)
        running = np.zeros(size)

        for segment, offset in zip(self.segments, offsets[:-1]):
            block = slice(offset, offset + segment.n + 1)
            self.nodes[block] = segment.nodes
            for k in range(segment.n + 1):
                self.head_matrix[offset + k] = running
                self.head_matrix[offset + k, block] += segment.head_matrix[k]
            self.derivative_matrix[block, block] += segment.derivative_matrix
            counts[block] += 1
            running = running.copy()
            running[block] += segment.weights
        self.weights = running
        # shared nodes take the mean of the one-sided derivatives
        self.derivative_matrix /= counts[:, np.newaxis]
        logger.debug("column grid: %d nodes, layer depth %.3e", size, d)

    @classmethod
    def for_geometry(cls, geometry: GeometryBundle, z_max: float, nzeta: int = 64) -> ColumnGrid:
        """
        Sizes the wall segments to hold the thickest layer out to z_max.
        """
        return cls(float(geometry.delta.max()) * z_max, n_wall=max(8, nzeta // 2), n_core=max(12, nzeta // 8))

    @property
    def size(self) -> int:
        return self.nodes.size

    def __str__(self) -> str:
        return f"ColumnGrid ({self.size} nodes, layer depth {self.layer_depth:.3e})"

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return values @ self.weights

    def head(self, values: np.ndarray) -> np.ndarray:
        """
        Returns int_0^zeta at every node.
        """
        return values @ self.head_matrix.T

    def differentiate(self, values: np.ndarray) -> np.ndarray:
        return values @ self.derivative_matrix.T


class TerrainField:
    """
    Values on the terrain-following grid (..., Nx, Ny, Nzeta) with their first and
    second zeta derivatives booked alongside.
    """

    value: np.ndarray
    d_zeta: np.ndarray
    d_zeta2: np.ndarray

    def __init__(self, value: np.ndarray, d_zeta: np.ndarray | None = None, d_zeta2: np.ndarray | None = None) -> None:
        self.value = np.asarray(value, dtype=float)
        self.d_zeta = np.zeros_like(self.value) if d_zeta is None else np.asarray(d_zeta, dtype=float)
        self.d_zeta2 = np.zeros_like(self.value) if d_zeta2 is None else np.asarray(d_zeta2, dtype=float)

    @classmethod
    def uniform(cls, field: np.ndarray, nz: int) -> TerrainField:
        """
        Extends a zeta-independent field.
        """
        return cls(np.repeat(np.asarray(field, dtype=float)[..., np.newaxis], nz, axis=-1))

    @classmethod
    def stack(cls, fields: list[TerrainField]) -> TerrainField:
        return cls(np.stack([f.value for f in fields]), np.stack([f.d_zeta for f in fields]),
                   np.stack([f.d_zeta2 for f in fields]))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def component(self, i: int) -> TerrainField:
        return TerrainField(self.value[i], self.d_zeta[i], self.d_zeta2[i])

    def __add__(self, other: TerrainField) -> TerrainField:
        return TerrainField(self.value + other.value, self.d_zeta + other.d_zeta, self.d_zeta2 + other.d_zeta2)

    def __neg__(self) -> TerrainField:
        return TerrainField(-self.value, -self.d_zeta, -self.d_zeta2)

    def __sub__(self, other: TerrainField) -> TerrainField:
        return self + (-other)

    def scaled(self, factor: np.ndarray | float) -> TerrainField:
        """
        Multiplies by a number or a zeta-independent (Nx, Ny) field.
        """
        factor = np.asarray(factor, dtype=float)
        if factor.ndim:
            factor = factor[..., np.newaxis]
        return TerrainField(self.value * factor, self.d_zeta * factor, self.d_zeta2 * factor)

    def times_profile(self, p: np.ndarray, dp: np.ndarray, d2p: np.ndarray) -> TerrainField:
        """
        Multiplies by a function of zeta alone given with its two derivatives.
        """
        return TerrainField(p * self.value,
                            dp * self.value + p * self.d_zeta,
                            d2p * self.value + 2.0 * dp * self.d_zeta + p * self.d_zeta2)


def vertical_offset(velocity: TerrainField, geometry: GeometryBundle) -> TerrainField:
    """
    Returns W = U3 - grad B . U_h, the velocity across the zeta levels.
    """
    bx, by = geometry.Bx[..., np.newaxis], geometry.By[..., np.newaxis]
    return TerrainField(velocity.value[2] - bx * velocity.value[0] - by * velocity.value[1],
                        velocity.d_zeta[2] - bx * velocity.d_zeta[0] - by * velocity.d_zeta[1],
                        velocity.d_zeta2[2] - bx * velocity.d_zeta2[0] - by * velocity.d_zeta2[1])


# Cartesian derivatives through the terrain-following chain rule
#   d/dx|z = d/dx|zeta - Bx d/dzeta,  d/dy|z = d/dy|zeta - By d/dzeta,  d/dz = d/dzeta,
# with horizontal derivatives at fixed zeta taken spectrally.

def terrain_gradient(field: TerrainField, geometry: GeometryBundle) -> np.ndarray:
    """
    Returns the Cartesian gradient stacked on a new leading axis of length 3.
    """
    grid = geometry.grid
    bx, by = geometry.Bx[..., np.newaxis], geometry.By[..., np.newaxis]
    return np.stack([grid.ddx(field.value, trailing=1) - bx * field.d_zeta,
                     grid.ddy(field.value, trailing=1) - by * field.d_zeta,
                     field.d_zeta])


def terrain_laplacian(field: TerrainField, geometry: GeometryBundle) -> np.ndarray:
    """
    Returns lap_h|zeta f - 2 grad B . grad_h|zeta (df/dzeta) - lap(B) df/dzeta + sec^2(g) d2f/dzeta2.
    """
    grid = geometry.grid
    bx, by = geometry.Bx[..., np.newaxis], geometry.By[..., np.newaxis]
    cross = bx * grid.ddx(field.d_zeta, trailing=1) + by * grid.ddy(field.d_zeta, trailing=1)
    sec2 = (1.0 / geometry.cos_gamma ** 2)[..., np.newaxis]
    return (grid.laplacian(field.value, trailing=1) - 2.0 * cross
            - geometry.lap_B[..., np.newaxis] * field.d_zeta + sec2 * field.d_zeta2)


def terrain_divergence(velocity: TerrainField, geometry: GeometryBundle) -> np.ndarray:
    """
    Returns div U = div_h|zeta U_h + dW/dzeta for a three component field.
    """
    grid = geometry.grid
    horizontal = grid.divergence(velocity.value[0], velocity.value[1], trailing=1)
    return horizontal + vertical_offset(velocity, geometry).d_zeta


def divergence_parts(velocity: TerrainField, geometry: GeometryBundle) -> tuple[np.ndarray, np.ndarray]:
    """
    Returns the two parts of the divergence, (div_h|zeta U_h, dW/dzeta).
    """
    grid = geometry.grid
    return (grid.divergence(velocity.value[0], velocity.value[1], trailing=1),
            vertical_offset(velocity, geometry).d_zeta)


def advect(velocity: TerrainField, field: TerrainField, geometry: GeometryBundle) -> np.ndarray:
    """
    Returns (U . grad) f for every component of f.
    """
    gradient = terrain_gradient(field, geometry)
    return sum(velocity.value[k] * gradient[k] for k in range(3))


def column_l2(values: np.ndarray, grid: PeriodicGrid, column: ColumnGrid) -> float:
    """
    Returns the L2 norm over the channel of values shaped (..., Nx, Ny, Nzeta).
    """
    return float(np.sqrt(np.sum((values ** 2) @ column.weights) * grid.cell_area))


def layer_coordinate(zeta: np.ndarray, delta: np.ndarray, side: Side) -> np.ndarray:
    """
    Returns xi per column, shape (Nx, Ny, Nzeta).
    """
    distance = zeta if side == Side.bottom else CHANNEL_HEIGHT - zeta
    return distance[np.newaxis, np.newaxis, :] / delta[..., np.newaxis]


def layer_terrain_field(series: LayerSeries, xi: np.ndarray, side: Side, delta: np.ndarray) -> TerrainField:
    """
    Evaluates a layer series on the columns with d/dzeta = (s / delta) d/dxi.
    """
    d1 = series.d_xi()
    inverse = 1.0 / delta[..., np.newaxis]
    return TerrainField(series.real(xi), side.sign * inverse * d1.real(xi), inverse ** 2 * d1.d_xi().real(xi))


class LayerStack:
    """
    One side's layer velocity U0 + delta U1 + delta^2 U3_2 e3 (with its interior order-2
    value) and layer pressure delta P1 + delta^2 P2 on the columns.
    """

    side: Side
    velocity: TerrainField
    pressure: TerrainField

    def __init__(self, profiles: LayerProfileSet, geometry: GeometryBundle, column: ColumnGrid,
                 with_pressure: bool = True) -> None:
        self.side = profiles.side
        delta = geometry.delta
        xi = layer_coordinate(column.nodes, delta, self.side)

        horizontal = profiles.order0.horizontal + profiles.order1.horizontal * delta
        vertical = (profiles.order0.vertical + profiles.order1.vertical * delta
                    + profiles.order2.vertical * delta ** 2)
        h = layer_terrain_field(horizontal, xi, self.side, delta)
        v = layer_terrain_field(vertical, xi, self.side, delta)
        v = v + TerrainField.uniform(delta ** 2 * profiles.order2.interior, column.size)
        self.velocity = TerrainField.stack([h.component(0), h.component(1), v])

        if with_pressure:
            pressure = profiles.order0.pressure * delta + profiles.order1.pressure * delta ** 2
            self.pressure = layer_terrain_field(pressure, xi, self.side, delta)
        else:
            self.pressure = TerrainField(np.zeros(self.velocity.shape[1:]))


class UncorrectedField:
    """
    The blended interior and layer velocity before the divergence correction, with the
    divergence defect it leaves: defect = -div(field) = -chi' (W_top - W_bottom).
    """

    components: dict[str, TerrainField]
    defect: np.ndarray
    defect_slope: np.ndarray
    stacks: dict[Side, LayerStack]

    def __init__(self, components: dict[str, TerrainField], defect: np.ndarray, defect_slope: np.ndarray,
                 stacks: dict[Side, LayerStack]) -> None:
        self.components = components
        self.defect = defect
        self.defect_slope = defect_slope
        self.stacks = stacks

    @property
    def velocity(self) -> TerrainField:
        parts = list(self.components.values())
        return sum(parts[1:], parts[0])


def _check_profiles(profile_sets: dict[Side, LayerProfileSet], geometry: GeometryBundle) -> None:
    shape = geometry.cos_gamma.shape
    try:
        assert set(profile_sets) == {Side.bottom, Side.top}
        for profiles in profile_sets.values():
            assert profiles.flow.u.shape[1:] == shape
        assert np.array_equal(profile_sets[Side.bottom].flow.u, profile_sets[Side.top].flow.u)
    except AssertionError:
        raise GridError("bottom and top profiles must come from the same flow on the geometry grid")


def assemble_uncorrected(flow: FlowSnapshot | LimitState, profile_sets: dict[Side, LayerProfileSet],
                         geometry: GeometryBundle, column: ColumnGrid, cutoff: CutoffProfile,
                         with_pressure: bool = True) -> UncorrectedField:
    """
    Returns u + U0_BL + delta U1_int + delta U1_BL + delta^2 U3_2 pieces, each layer
    blended as chi (top) + (1 - chi) (bottom), and its divergence defect.
    """
    if isinstance(flow, LimitState):
        flow = FlowSnapshot.from_state(flow)
    _check_profiles(profile_sets, geometry)
    nz = column.size
    delta = geometry.delta
    u = flow.u

    mean = TerrainField.uniform(np.stack([u[0], u[1], geometry.Bx * u[0] + geometry.By * u[1]]), nz)

    interior = profile_sets[Side.bottom].interior
    slope = -(delta * interior.slope)[..., np.newaxis] * np.ones(nz)
    interior1 = TerrainField.stack([
        TerrainField.uniform(delta * interior.horizontal[0], nz),
        TerrainField.uniform(delta * interior.horizontal[1], nz),
        TerrainField(delta[..., np.newaxis] * interior.vertical(column.nodes), slope),
    ])

    chi, d_chi, d2_chi = cutoff.profile(column.nodes)
    stacks = {side: LayerStack(profile_sets[side], geometry, column, with_pressure) for side in Side}
    layer = (stacks[Side.bottom].velocity.times_profile(1.0 - chi, -d_chi, -d2_chi)
             + stacks[Side.top].velocity.times_profile(chi, d_chi, d2_chi))

    jump = vertical_offset(stacks[Side.top].velocity, geometry) - vertical_offset(stacks[Side.bottom].velocity, geometry)
    defect = -d_chi * jump.value
    defect_slope = -d2_chi * jump.value - d_chi * jump.d_zeta

    components = {"mean": mean, "interior1": interior1, "layer": layer}
    return UncorrectedField(components, defect, defect_slope, stacks)


class Corrector:
    """
    The explicit divergence corrector V with div V = defect and V = 0 on both walls:
        g = int_0^2 defect dzeta,   V_h = eta grad lap^-1 g,
        V3 = grad B . V_h + int_0^zeta (defect - g eta),
    with eta = chi', which integrates to one over the core.
    """

    velocity: TerrainField
    flux: np.ndarray
    compatibility_residual: float
    divergence_residual: float

    def __init__(self, velocity: TerrainField, flux: np.ndarray, compatibility_residual: float,
                 divergence_residual: float) -> None:
        self.velocity = velocity
        self.flux = flux
        self.compatibility_residual = compatibility_residual
        self.divergence_residual = divergence_residual

    def __str__(self) -> str:
        return (f"Corrector (compatibility residual {self.compatibility_residual:.3e}, "
                f"divergence residual {self.divergence_residual:.3e})")


def divergence_corrector(defect: np.ndarray, geometry: GeometryBundle, column: ColumnGrid,
                         cutoff: CutoffProfile | None = None, defect_slope: np.ndarray | None = None) -> Corrector:
    """
    Builds V for a defect (Nx, Ny, Nzeta) that vanishes within a quarter of each wall.
    The mean of the flux g over the box is the compatibility residual; it is zero for
    every defect of an assembled field.
    """
    if cutoff is None:
        cutoff = CutoffProfile()
    grid = geometry.grid
    zeta = column.nodes
    scale = float(np.abs(defect).max())

    # check if the defect stays off the walls
    near_wall = (zeta < SUPPORT_MARGIN) | (zeta > CHANNEL_HEIGHT - SUPPORT_MARGIN)
    if scale > 0.0 and float(np.abs(defect[..., near_wall]).max()) > 1e-12 * scale:
        raise CorrectorSupportError(
            f"divergence defect reaches within {SUPPORT_MARGIN} of a wall "
            f"(largest value there {float(np.abs(defect[..., near_wall]).max()):.3e})"
        )
    if defect_slope is None:
        defect_slope = column.differentiate(defect)

    eta, d_eta, d2_eta = (cutoff.derivative(zeta, n) for n in (1, 2, 3))
    flux = column.integrate(defect) / column.integrate(eta)
    compatibility = float(abs(grid.mean(flux)))
    if compatibility > 1e-10 * max(float(np.abs(flux).max()), 1e-300):
        logger.warning("corrector flux has a nonzero mean %.3e, the corrected field keeps it as divergence",
                       compatibility)

    potential = grid.gradient(grid.inverse_laplacian(flux))
    horizontal = TerrainField(potential[..., np.newaxis] * eta, potential[..., np.newaxis] * d_eta,
                              potential[..., np.newaxis] * d2_eta)
    source = defect - flux[..., np.newaxis] * eta
    offset = TerrainField(column.head(source), source, defect_slope - flux[..., np.newaxis] * d_eta)
    bx, by = geometry.Bx, geometry.By
    vertical = (horizontal.component(0).scaled(bx) + horizontal.component(1).scaled(by)) + offset
    velocity = TerrainField.stack([horizontal.component(0), horizontal.component(1), vertical])

    residual = terrain_divergence(velocity, geometry) - defect
    divergence_residual = column_l2(residual, grid, column) / max(column_l2(defect, grid, column), 1e-300)
    corrector = Corrector(velocity, flux, compatibility, divergence_residual if scale > 0.0 else 0.0)
    logger.info("%s", corrector)
    return corrector


class ApproxSolution:
    """
    The approximate solution U_app = u + U0_BL + delta (U1_int + U1_BL) + delta^2 U3_2 + V
    and P_app = P0_int + eps p + delta P1_BL + delta^2 P2_BL on the terrain-following grid,
    with its components kept for diagnostics. The uniform part eps G of the pressure
    gradient, which has no periodic potential, is kept in pressure_gradient_mean.
    rate_components hold dU_app/dt per component, assembled from (u_t, u_tt).
    """

    geometry: GeometryBundle
    column: ColumnGrid
    cutoff: CutoffProfile
    flow: FlowSnapshot
    time: float
    components: dict[str, TerrainField]
    pressure_parts: dict[str, TerrainField]
    pressure_gradient_mean: np.ndarray
    defect: np.ndarray
    corrector: Corrector
    profiles: dict[Side, LayerProfileSet]
    rate_components: dict[str, TerrainField] | None

    def __init__(self, geometry: GeometryBundle, column: ColumnGrid, cutoff: CutoffProfile, flow: FlowSnapshot,
                 time: float, components: dict[str, TerrainField], pressure_parts: dict[str, TerrainField],
                 pressure_gradient_mean: np.ndarray, defect: np.ndarray, corrector: Corrector,
                 profiles: dict[Side, LayerProfileSet],
                 rate_components: dict[str, TerrainField] | None = None) -> None:
        self.geometry = geometry
        self.column = column
        self.cutoff = cutoff
        self.flow = flow
        self.time = float(time)
        self.components = components
        self.pressure_parts = pressure_parts
        self.pressure_gradient_mean = np.asarray(pressure_gradient_mean, dtype=float)
        self.defect = defect
        self.corrector = corrector
        self.profiles = profiles
        self.rate_components = rate_components

    @property
    def grid(self) -> PeriodicGrid:
        return self.geometry.grid

    @property
    def epsilon(self) -> float:
        return self.geometry.epsilon

    @property
    def nu(self) -> float:
        return self.geometry.nu

    @property
    def velocity(self) -> TerrainField:
        parts = [self.components[name] for name in COMPONENT_NAMES]
        return sum(parts[1:], parts[0])

    @property
    def uncorrected(self) -> TerrainField:
        parts = [self.components[name] for name in COMPONENT_NAMES if name != "corrector"]
        return sum(parts[1:], parts[0])

    @property
    def rate(self) -> TerrainField | None:
        if self.rate_components is None:
            return None
        parts = [self.rate_components[name] for name in COMPONENT_NAMES]
        return sum(parts[1:], parts[0])

    @property
    def pressure(self) -> TerrainField:
        return self.pressure_parts["interior"] + self.pressure_parts["layer"]

    def l2(self, values: np.ndarray) -> float:
        return column_l2(values, self.grid, self.column)

    def boundary_residual(self) -> float:
        """
        Returns max |U_app| on both walls relative to max |u|.
        """
        value = self.velocity.value
        walls = max(float(np.abs(value[..., 0]).max()), float(np.abs(value[..., -1]).max()))
        return walls / max(float(speed(self.flow.u).max()), 1e-300)

    def divergence_residual(self, corrected: bool = True) -> float:
        """
        Returns ||div U|| relative to the size of the two parts that cancel in it.
        """
        field = self.velocity if corrected else self.uncorrected
        horizontal, vertical = divergence_parts(field, self.geometry)
        scale = max(self.l2(horizontal) + self.l2(vertical), 1e-300)
        return self.l2(horizontal + vertical) / scale

    def distance_to_limit(self) -> float:
        """
        Returns ||U_app - u||_L2 over the channel.
        """
        return self.l2(self.velocity.value - self.components["mean"].value)

    def component_norms(self) -> dict[str, float]:
        return {name: self.l2(self.components[name].value) for name in COMPONENT_NAMES}

    def summary_rows(self) -> tuple[list[str], list[list[object]]]:
        """
        Returns the CSV columns and rows describing the assembly.
        """
        rows = [[f"L2_{name}", value] for name, value in self.component_norms().items()]
        rows += [
            ["L2_distance_to_limit", self.distance_to_limit()],
            ["L2_defect", self.l2(self.defect)],
            ["boundary_residual", self.boundary_residual()],
            ["divergence_residual", self.divergence_residual()],
            ["divergence_residual_uncorrected", self.divergence_residual(corrected=False)],
            ["corrector_divergence_residual", self.corrector.divergence_residual],
            ["corrector_compatibility_residual", self.corrector.compatibility_residual],
            ["epsilon", self.epsilon],
            ["time", self.time],
        ]
        return ["quantity", "value"], rows

    def __str__(self) -> str:
        return (f"ApproxSolution (eps={self.epsilon:g}, t={self.time:.4g}, {self.grid.nx}x{self.grid.ny}x"
                f"{self.column.size}, ||U_app - u||={self.distance_to_limit():.3e})")


def build_profile_sets(flow: FlowSnapshot, geometry: GeometryBundle, axis: StretchedAxis,
                       kernel: LayerKernel = LayerKernel.green, pack: DiagonalizationPack | None = None,
                       pressure_signs: dict[Side, int] | None = None,
                       check_tails: bool = True) -> dict[Side, LayerProfileSet]:
    if pack is None:
        pack = DiagonalizationPack(geometry)
    signs = pressure_signs or {}
    return {side: build_layer_profiles(flow, geometry, side, axis, kernel, pack, signs.get(side), check_tails)
            for side in Side}


def assemble_approx(state: LimitState, geometry: GeometryBundle | None = None, epsilon: float | None = None,
                    axis: StretchedAxis | None = None, column: ColumnGrid | None = None,
                    cutoff: CutoffProfile | None = None, kernel: LayerKernel = LayerKernel.green,
                    nzeta: int = 64, with_rate: bool = True) -> ApproxSolution:
    """
    Assembles the approximate solution of the rotating channel at the state's time.
    """
    if geometry is None:
        geometry = state.geometry
    if epsilon is not None:
        geometry = geometry.with_epsilon(epsilon)
    if not geometry.grid.same_as(state.grid):
        raise GridError(f"limit state on {state.grid} does not match geometry on {geometry.grid}")
    axis = axis or StretchedAxis()
    cutoff = cutoff or CutoffProfile()
    column = column or ColumnGrid.for_geometry(geometry, axis.z_max, nzeta)

    flow = FlowSnapshot.from_state(state)
    pack = DiagonalizationPack(geometry)
    profiles = build_profile_sets(flow, geometry, axis, kernel, pack)
    uncorrected = assemble_uncorrected(flow, profiles, geometry, column, cutoff)
    corrector = divergence_corrector(uncorrected.defect, geometry, column, cutoff, uncorrected.defect_slope)
    components = dict(uncorrected.components)
    components["corrector"] = corrector.velocity

    eps = geometry.epsilon
    p, p0_int, mean_gradient = state.system.pressure(state.u)
    chi, d_chi, d2_chi = cutoff.profile(column.nodes)
    stacks = uncorrected.stacks
    pressure_parts = {
        "interior": TerrainField.uniform(p0_int + eps * p, column.size),
        "layer": (stacks[Side.bottom].pressure.times_profile(1.0 - chi, -d_chi, -d2_chi)
                  + stacks[Side.top].pressure.times_profile(chi, d_chi, d2_chi)),
    }

    rate_components = None
    if with_rate:
        rate_flow = FlowSnapshot.time_derivative_of(state)
        signs = {side: profiles[side].order1.pressure_sign for side in Side}
        rate_profiles = build_profile_sets(rate_flow, geometry, axis, kernel, pack, signs, check_tails=False)
        rate_field = assemble_uncorrected(rate_flow, rate_profiles, geometry, column, cutoff, with_pressure=False)
        rate_corrector = divergence_corrector(rate_field.defect, geometry, column, cutoff, rate_field.defect_slope)
        rate_components = dict(rate_field.components)
        rate_components["corrector"] = rate_corrector.velocity

    solution = ApproxSolution(geometry, column, cutoff, flow, state.t, components, pressure_parts,
                              eps * mean_gradient, uncorrected.defect, corrector, profiles, rate_components)
    logger.info("%s", solution)
    return solution
