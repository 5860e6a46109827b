from __future__ import annotations

import logging
from enum import Enum
from math import factorial

import numpy as np

from errors import QuadratureError
from geometry import GeometryBundle
from limit2d import LimitState, matvec, rotate_e1
from spectral import ChebyshevInterval, PeriodicGrid

logger = logging.getLogger(__name__)

A = 1.0 / np.sqrt(2.0)           # decay and turning rate of the Ekman spiral
AUDIT_TOLERANCE = 1e-10

# exponents of the two decaying spiral modes, as integer pairs (m, n) for A (m + i n)
ROOT_MINUS_I = (1, -1)           # sqrt(-i) = (1 - i) / sqrt(2)
ROOT_PLUS_I = (1, 1)             # sqrt(i)  = (1 + i) / sqrt(2)


class Side(Enum):
    """
    The wall a layer is attached to.
    """
    bottom = "bottom"
    top = "top"

    def __str__(self) -> str:
        return self.value

    @property
    def sign(self) -> int:
        """
        +1 for the bottom (xi = zeta / delta), -1 for the top (xi = (2 - zeta) / delta).
        """
        return 1 if self == Side.bottom else -1


class LayerKernel(Enum):
    """
    How the order-1 layer equation w'' + lambda w = G is solved.
    green: the decaying half-line solution with w(0) = 0.
    convolution: the one-sided convolution int_0^xi exp(-rho (xi - tau)) G dtau.
    """
    green = "green"
    convolution = "convolution"

    def __str__(self) -> str:
        return self.value


class StretchedAxis(ChebyshevInterval):
    """
    The layer variable axis [0, z_max], clustered at both ends, shared by all profiles.
    """

    z_max: float
    tail_tolerance: float
    quadrature_tolerance: float

    def __init__(self, z_max: float = 28.0, n_nodes: int = 256, tail_tolerance: float = 1e-8,
                 quadrature_tolerance: float = 1e-4) -> None:
        try:
            assert n_nodes >= 8 and z_max > 0
        except AssertionError:
            raise ValueError(f"stretched axis needs n_nodes >= 8 and z_max > 0, got {n_nodes}, {z_max}")
        if np.exp(-A * z_max) >= tail_tolerance:
            raise ValueError(
                f"z_max={z_max:g} leaves a layer tail exp(-z_max/sqrt 2)={np.exp(-A * z_max):.2e} "
                f"above the tail tolerance {tail_tolerance:.1e}"
            )
        super().__init__(0.0, z_max, n_nodes)
        self.z_max = float(z_max)
        self.tail_tolerance = tail_tolerance
        self.quadrature_tolerance = quadrature_tolerance
        logger.debug("stretched axis: %d nodes on [0, %g]", n_nodes + 1, self.z_max)

    @property
    def n_nodes(self) -> int:
        return self.n

    def __str__(self) -> str:
        return f"StretchedAxis ({self.n + 1} nodes on [0, {self.z_max:g}])"

    def check_tail(self, values: np.ndarray, name: str = "profile") -> None:
        """
        Raises QuadratureError if a sampled profile has not decayed at z_max.
        """
        scale = float(np.abs(values).max())
        if scale == 0.0:
            return
        tail = float(np.abs(values[..., -1]).max()) / scale
        if tail > self.quadrature_tolerance:
            logger.warning("%s has relative tail %.3e at z_max=%g", name, tail, self.z_max)
            raise QuadratureError(self.z_max, tail, self.quadrature_tolerance)


Key = tuple[int, int, int]


class LayerSeries:
    """
    A layer profile sum_k c_k(x, y) xi^p exp(-rho xi) with rho = A (m + i n), stored as
    {(p, m, n): c}. Coefficients are complex arrays sharing one shape, e.g. (Nx, Ny) for
    scalars and (2, Nx, Ny) for horizontal vectors. Physical fields are the real part.
    """

    terms: dict[Key, np.ndarray]

    def __init__(self, terms: dict[Key, np.ndarray] | None = None) -> None:
        self.terms = {k: np.asarray(v, dtype=complex) for k, v in (terms or {}).items()}

    @staticmethod
    def rate(key: Key) -> complex:
        return A * complex(key[1], key[2])

    @classmethod
    def spiral(cls, cos_part: np.ndarray, sin_part: np.ndarray) -> LayerSeries:
        """
        Returns exp(-A xi) (cos(A xi) cos_part + sin(A xi) sin_part).
        """
        cos_part = np.asarray(cos_part, dtype=complex)
        sin_part = np.asarray(sin_part, dtype=complex)
        return cls({
            (0, *ROOT_MINUS_I): (cos_part - 1j * sin_part) / 2.0,
            (0, *ROOT_PLUS_I): (cos_part + 1j * sin_part) / 2.0,
        })

    @classmethod
    def exponential(cls, coefficient: np.ndarray, root: tuple[int, int]) -> LayerSeries:
        return cls({(0, *root): coefficient})

    @classmethod
    def stack(cls, components: list[LayerSeries]) -> LayerSeries:
        """
        Stacks scalar series into a vector series along a new leading axis.
        """
        keys = sorted(set().union(*(c.terms for c in components)))
        shape = next(v.shape for c in components for v in c.terms.values())
        zero = np.zeros(shape, dtype=complex)
        return cls({k: np.stack([c.terms.get(k, zero) for c in components]) for k in keys})

    # algebra

    def map(self, fn) -> LayerSeries:
        """
        Applies a linear map to every coefficient.
        """
        return LayerSeries({k: fn(v) for k, v in self.terms.items()})

    def __add__(self, other: LayerSeries) -> LayerSeries:
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms[k] + v if k in terms else v
        return LayerSeries(terms)

    def __neg__(self) -> LayerSeries:
        return self.map(lambda v: -v)

    def __sub__(self, other: LayerSeries) -> LayerSeries:
        return self + (-other)

    def __mul__(self, factor) -> LayerSeries:
        """
        Multiplies by a number or a field broadcasting against the coefficients.
        """
        return self.map(lambda v: v * factor)

    __rmul__ = __mul__

    def conjugate(self) -> LayerSeries:
        return LayerSeries({(p, m, -n): np.conj(v) for (p, m, n), v in self.terms.items()})

    def real_part(self) -> LayerSeries:
        """
        Returns the series of Re f, as (f + conj f) / 2.
        """
        return (self + self.conjugate()) * 0.5

    def times_xi(self) -> LayerSeries:
        return LayerSeries({(p + 1, m, n): v for (p, m, n), v in self.terms.items()})

    def times_exp(self, m_shift: int, n_shift: int) -> LayerSeries:
        """
        Multiplies by exp(-A (m_shift + i n_shift) xi).
        """
        return LayerSeries({(p, m + m_shift, n + n_shift): v for (p, m, n), v in self.terms.items()})

    def component(self, i: int) -> LayerSeries:
        return self.map(lambda v: v[i])

    def dot(self, vector: np.ndarray) -> LayerSeries:
        """
        Returns vector . self for a vector series and a (2, Nx, Ny) field.
        """
        return self.map(lambda v: np.einsum("i...,i...->...", vector, v))

    def matvec(self, matrix: np.ndarray) -> LayerSeries:
        return self.map(lambda v: np.einsum("ij...,j...->i...", matrix, v))

    def ddx(self, grid: PeriodicGrid) -> LayerSeries:
        """
        Horizontal derivative at fixed xi.
        """
        return self.map(grid.ddx)

    def ddy(self, grid: PeriodicGrid) -> LayerSeries:
        return self.map(grid.ddy)

    def divergence(self, grid: PeriodicGrid) -> LayerSeries:
        return self.component(0).ddx(grid) + self.component(1).ddy(grid)

    def directional(self, grid: PeriodicGrid, vector: np.ndarray) -> LayerSeries:
        """
        Returns (vector . grad_xi) self.
        """
        return self.ddx(grid) * vector[0] + self.ddy(grid) * vector[1]

    # calculus in xi

    def d_xi(self) -> LayerSeries:
        terms: dict[Key, np.ndarray] = {}
        for (p, m, n), v in self.terms.items():
            rho = self.rate((p, m, n))
            _accumulate(terms, (p, m, n), -rho * v)
            if p > 0:
                _accumulate(terms, (p - 1, m, n), p * v)
        return LayerSeries(terms)

    def antiderivative(self) -> LayerSeries:
        """
        Returns an antiderivative; terms with rho != 0 get the one vanishing at infinity
        when Re rho > 0.
        """
        terms: dict[Key, np.ndarray] = {}
        for (p, m, n), v in self.terms.items():
            if m == 0 and n == 0:
                _accumulate(terms, (p + 1, 0, 0), v / (p + 1))
                continue
            rho = self.rate((p, m, n))
            for j in range(p + 1):
                _accumulate(terms, (j, m, n), -v * (factorial(p) / factorial(j)) / rho ** (p - j + 1))
        return LayerSeries(terms)

    def at_zero(self) -> np.ndarray:
        values = [v for (p, _, _), v in self.terms.items() if p == 0]
        return sum(values[1:], values[0]) if values else np.zeros(())

    def head(self) -> LayerSeries:
        """
        Returns int_0^xi f.
        """
        antiderivative = self.antiderivative()
        return antiderivative + LayerSeries({(0, 0, 0): -antiderivative.at_zero()})

    def tail(self) -> LayerSeries:
        """
        Returns int_xi^inf f. Every term must decay.
        """
        if any(m <= 0 for (_, m, _) in self.terms):
            raise ValueError("tail integral of a non-decaying layer series")
        return -self.antiderivative()

    # evaluation

    @property
    def max_power(self) -> int:
        return max((p for (p, _, _) in self.terms), default=0)

    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        """
        Evaluates at xi. xi is either 1D (axis nodes, result shape coefficient shape + (M,))
        or shaped (Nx, Ny, M) per column (result shape coefficient shape[:-2] + (Nx, Ny, M)).
        """
        xi = np.asarray(xi, dtype=float)
        result = None
        for key, v in self.terms.items():
            p = key[0]
            basis = np.exp(-self.rate(key) * xi)
            if p:
                basis = basis * xi ** p
            term = v[..., np.newaxis] * basis
            result = term if result is None else result + term
        if result is None:
            return np.zeros(xi.shape, dtype=complex)
        return result

    def real(self, xi: np.ndarray) -> np.ndarray:
        return self.evaluate(xi).real

    def envelope_constant(self) -> float:
        """
        Returns C with |f(xi)| <= C exp(-A xi) (1 + xi)^max_power for all xi >= 0.
        """
        total = 0.0
        for (p, m, n), v in self.terms.items():
            total += float(np.abs(v).max())
        return total

    def __str__(self) -> str:
        return f"LayerSeries ({len(self.terms)} terms, max power {self.max_power})"


def _accumulate(terms: dict[Key, np.ndarray], key: Key, value: np.ndarray) -> None:
    terms[key] = terms[key] + value if key in terms else value


class FlowSnapshot:
    """
    The limit flow and its time derivative, which is all the profiles depend on.
    """

    u: np.ndarray
    u_t: np.ndarray

    def __init__(self, u: np.ndarray, u_t: np.ndarray) -> None:
        self.u = u
        self.u_t = u_t

    @classmethod
    def from_state(cls, state: LimitState) -> FlowSnapshot:
        return cls(state.u, state.tendency())

    @classmethod
    def time_derivative_of(cls, state: LimitState) -> FlowSnapshot:
        """
        Returns (u_t, u_tt); profiles are linear in the snapshot, so profiles built from it
        are the time derivatives of the profiles of from_state.
        """
        return cls(state.tendency(), state.second_tendency())


class DiagonalizationPack:
    """
    Q, Q^-1 per grid point with Q^-1 (sec(g) H0^-1 E1) Q = diag(i, -i).
    The closed-form pair is audited against a numerical eigendecomposition and replaced
    by it where the audit fails.
    """

    Q: np.ndarray
    Q_inv: np.ndarray
    eigenvalues: tuple[complex, complex] = (1j, -1j)
    roots: tuple[tuple[int, int], tuple[int, int]] = (ROOT_MINUS_I, ROOT_PLUS_I)
    closed_form_residual: float
    residual: float
    fallback: bool

    def __init__(self, geometry: GeometryBundle, closed_form: tuple[np.ndarray, np.ndarray] | None = None) -> None:
        """
        closed_form overrides the closed-form pair, for auditing alternative formulas.
        """
        self.matrix = rotation_matrix(geometry)
        q, q_inv = closed_form if closed_form is not None else closed_form_pack(geometry)
        self.closed_form_residual = diagonalization_residual(self.matrix, q, q_inv)

        if self.closed_form_residual < AUDIT_TOLERANCE:
            self.Q, self.Q_inv = q, q_inv
            self.fallback = False
        else:
            self.Q, self.Q_inv = eigen_pack(self.matrix)
            self.fallback = True
            logger.warning("closed-form diagonalization fails its audit (residual %.3e), using numerical eigenvectors",
                           self.closed_form_residual)
        self.residual = diagonalization_residual(self.matrix, self.Q, self.Q_inv)
        logger.info("diagonalization residual %.3e (fallback: %s)", self.residual, self.fallback)


def rotation_matrix(geometry: GeometryBundle) -> np.ndarray:
    """
    Returns sec(g) H0^-1 E1 = cos(g) [[BxBy, 1 + By^2], [-(1 + Bx^2), -BxBy]].
    """
    c, bx, by = geometry.cos_gamma, geometry.Bx, geometry.By
    return c * np.array([[bx * by, 1.0 + by ** 2], [-(1.0 + bx ** 2), -bx * by]])


def closed_form_pack(geometry: GeometryBundle) -> tuple[np.ndarray, np.ndarray]:
    c, bx, by = geometry.cos_gamma, geometry.Bx, geometry.By
    top = c * (1.0 + by ** 2)
    cross = c * bx * by
    q = np.array([[top, top], [1j - cross, -1j - cross]], dtype=complex)
    q_inv = (-1j / (2.0 * top)) * np.array([[1j + cross, top], [1j - cross, -top]], dtype=complex)
    return q, q_inv


def eigen_pack(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Numerical eigenvectors ordered so the first eigenvalue is +i.
    """
    m = np.moveaxis(matrix, (0, 1), (-2, -1))
    values, vectors = np.linalg.eig(m)
    order = np.argsort(-values.imag, axis=-1)
    vectors = np.take_along_axis(vectors, order[..., np.newaxis, :], axis=-1)
    inverse = np.linalg.inv(vectors)
    return np.moveaxis(vectors, (-2, -1), (0, 1)), np.moveaxis(inverse, (-2, -1), (0, 1))


def diagonalization_residual(matrix: np.ndarray, q: np.ndarray, q_inv: np.ndarray) -> float:
    """
    Returns max |Q Q^-1 - I| + max |Q^-1 M Q - diag(i, -i)| over the grid.
    """
    identity = np.eye(2).reshape(2, 2, *([1] * (matrix.ndim - 2)))
    diagonal = np.diag([1j, -1j]).reshape(2, 2, *([1] * (matrix.ndim - 2)))
    product = np.einsum("ij...,jk...->ik...", q, q_inv)
    similar = np.einsum("ij...,jk...,kl...->il...", q_inv, matrix, q)
    return float(np.abs(product - identity).max() + np.abs(similar - diagonal).max())


class InteriorOrder1:
    """
    The order-1 interior flow: a zeta-independent horizontal part and a vertical part
    affine in zeta = z - B, U3 = (1 - zeta) slope + offset.
    """

    horizontal: np.ndarray
    slope: np.ndarray
    offset: np.ndarray

    def __init__(self, horizontal: np.ndarray, slope: np.ndarray, offset: np.ndarray) -> None:
        self.horizontal = horizontal
        self.slope = slope
        self.offset = offset

    def vertical(self, zeta: np.ndarray | float) -> np.ndarray:
        """
        Returns U3 at zeta; an array zeta is laid along a trailing axis.
        """
        zeta = np.asarray(zeta, dtype=float)
        if zeta.ndim == 0:
            return (1.0 - zeta) * self.slope + self.offset
        return (1.0 - zeta) * self.slope[..., np.newaxis] + self.offset[..., np.newaxis]


def interior_order1(u: np.ndarray, geometry: GeometryBundle, zeta: np.ndarray | float | None = None):
    """
    Returns the order-1 interior correction of the flow u. With zeta given, returns the pair
    (horizontal, vertical at zeta); otherwise the InteriorOrder1 object.
    """
    grid = geometry.grid
    c = geometry.cos_gamma
    g = geometry.grad_B
    turned = c * rotate_e1(matvec(geometry.H0, u))
    horizontal = A * (turned + u)
    hg_dot = np.einsum("i...,i...->...", matvec(geometry.H, g), turned + u)
    slope = A * grid.divergence(turned[0], turned[1]) + 1.5 * A * c ** 2 * hg_dot
    offset = A * np.einsum("i...,i...->...", g, turned + u)
    interior = InteriorOrder1(horizontal, slope, offset)
    if zeta is None:
        return interior
    return horizontal, interior.vertical(zeta)


class Order0Profiles:
    """
    The leading layer velocity and the order-1 layer pressure.
    """

    horizontal: LayerSeries
    vertical: LayerSeries
    pressure: LayerSeries

    def __init__(self, horizontal: LayerSeries, vertical: LayerSeries, pressure: LayerSeries) -> None:
        self.horizontal = horizontal
        self.vertical = vertical
        self.pressure = pressure


def profile_order0(u: np.ndarray, geometry: GeometryBundle, side: Side) -> Order0Profiles:
    """
    Returns the Ekman spiral cancelling (u, grad B . u) at the wall, and its pressure:
        U_h = -exp(-A xi) (cos(A xi) u + sin(A xi) cos(g) E1 H0 u),
        U_3 = -exp(-A xi) (cos(A xi) grad B . u + sin(A xi) cos(g) grad_perp B . u),
    with d(P)/dxi = s cos(g) grad B . d2(U_h)/dxi2.
    """
    c = geometry.cos_gamma
    g = geometry.grad_B
    turned = c * rotate_e1(matvec(geometry.H0, u))
    horizontal = -LayerSeries.spiral(u, turned)
    vertical = -LayerSeries.spiral(np.einsum("i...,i...->...", g, u),
                                   c * np.einsum("i...,i...->...", geometry.grad_B_perp, u))
    pressure_slope = horizontal.d_xi().d_xi().dot(g) * (side.sign * c)
    return Order0Profiles(horizontal, vertical, -pressure_slope.tail())


def _transport(series: LayerSeries, geometry: GeometryBundle, coefficients: dict[str, np.ndarray]) -> LayerSeries:
    """
    Returns 2 g . grad_xi(dU) - 3 c^2 (g^T H g)(xi d2U + dU) + lap(B) dU.
    """
    d1 = series.d_xi()
    d2 = d1.d_xi()
    return (d1.directional(geometry.grid, geometry.grad_B) * 2.0
            - (d2.times_xi() + d1) * (3.0 * coefficients["c"] ** 2 * coefficients["gHg"])
            + d1 * geometry.lap_B)


class ForcingTerms:
    """
    The right-hand side of the order-1 layer equation, before and after diagonalization.
    """

    horizontal: LayerSeries     # F_h
    vertical: LayerSeries       # F_3
    divergence: LayerSeries     # F_0, divergence of the leading layer flow at fixed zeta
    rhs: LayerSeries            # F_h + g F_3 + s g dF_0
    G: LayerSeries              # Q^-1 H0^-1 rhs, complex pair

    def __init__(self, horizontal: LayerSeries, vertical: LayerSeries, divergence: LayerSeries,
                 rhs: LayerSeries, G: LayerSeries) -> None:
        self.horizontal = horizontal
        self.vertical = vertical
        self.divergence = divergence
        self.rhs = rhs
        self.G = G

    def sampled(self, axis: StretchedAxis) -> np.ndarray:
        """
        Returns (G3, G4) on the axis nodes, shape (2, Nx, Ny, M).
        """
        return self.G.evaluate(axis.nodes)


def _coefficients(geometry: GeometryBundle) -> dict[str, np.ndarray]:
    c = geometry.cos_gamma
    hg = matvec(geometry.H, geometry.grad_B)
    return {
        "c": c,
        "Hg": hg,
        "gHg": np.einsum("i...,i...->...", geometry.grad_B, hg),
        "dt_scale": np.sqrt(c / geometry.nu),
    }


def forcing_terms(flow: FlowSnapshot | LimitState, geometry: GeometryBundle, side: Side,
                  pack: DiagonalizationPack | None = None, order0: Order0Profiles | None = None) -> ForcingTerms:
    """
    Builds the forcing of the order-1 layer from the leading layer flow, its pressure and
    its time derivative (the profile of u_t).
    """
    if isinstance(flow, LimitState):
        flow = FlowSnapshot.from_state(flow)
    if not (np.all(np.isfinite(geometry.H)) and np.all(np.isfinite(geometry.lap_B))):
        raise ValueError("forcing terms need finite curvature fields H and lap(B)")

    grid = geometry.grid
    s = side.sign
    k = _coefficients(geometry)
    c, g, hg = k["c"], geometry.grad_B, k["Hg"]

    if order0 is None:
        order0 = profile_order0(flow.u, geometry, side)
    rate = profile_order0(flow.u_t, geometry, side)
    u0_h, u0_3, p1 = order0.horizontal, order0.vertical, order0.pressure

    p1_grad = LayerSeries.stack([p1.ddx(grid), p1.ddy(grid)])
    p1_stretch = p1 - p1.d_xi().times_xi()
    f_h = (rate.horizontal * k["dt_scale"]
           + p1_grad * (1.0 / c)
           + p1_stretch * (1.5 * c * hg)
           + _transport(u0_h, geometry, k) * (s * c ** 2))
    f_3 = rate.vertical * k["dt_scale"] + _transport(u0_3, geometry, k) * (s * c ** 2)
    f_0 = u0_h.divergence(grid) - u0_h.d_xi().dot(hg).times_xi() * (1.5 * c ** 2)

    rhs = f_h + f_3 * g + f_0.d_xi() * (s * g)
    if pack is None:
        pack = DiagonalizationPack(geometry)
    h0_inv = np.linalg.inv(np.moveaxis(geometry.H0, (0, 1), (-2, -1)))
    h0_inv = np.moveaxis(h0_inv, (-2, -1), (0, 1))
    G = rhs.matvec(np.einsum("ij...,jk...->ik...", pack.Q_inv, h0_inv))
    return ForcingTerms(f_h, f_3, f_0, rhs, G)


def solve_layer_mode(forcing: LayerSeries, eigenvalue: complex, root: tuple[int, int],
                     kernel: LayerKernel) -> LayerSeries:
    """
    Solves w'' + eigenvalue w = forcing for one diagonal mode.
    green: decaying solution with w(0) = 0, root r the decaying root of r^2 = -eigenvalue.
    convolution: w = int_0^xi exp(-rho (xi - tau)) forcing dtau with rho the other root.
    """
    m, n = root
    if kernel == LayerKernel.convolution:
        pm, pn = (1, -n)
        return forcing.times_exp(-pm, -pn).head().times_exp(pm, pn)

    r = A * complex(m, n)
    near = forcing.times_exp(-m, -n).head().times_exp(m, n)
    far = forcing.times_exp(m, n).tail().times_exp(-m, -n)
    boundary = LayerSeries.exponential(far.at_zero(), root)
    return (near + far - boundary) * (-1.0 / (2.0 * r))


class Order1Profiles:
    """
    The order-1 layer velocity and the order-2 layer pressure.
    """

    horizontal: LayerSeries
    vertical: LayerSeries
    vertical_offset: LayerSeries       # W = U3 - grad B . U_h
    pressure: LayerSeries
    pressure_sign: int
    modes: LayerSeries

    def __init__(self, horizontal: LayerSeries, vertical: LayerSeries, vertical_offset: LayerSeries,
                 pressure: LayerSeries, pressure_sign: int, modes: LayerSeries) -> None:
        self.horizontal = horizontal
        self.vertical = vertical
        self.vertical_offset = vertical_offset
        self.pressure = pressure
        self.pressure_sign = pressure_sign
        self.modes = modes


def _pressure_slope(u1_3: LayerSeries, rate: Order0Profiles, order0: Order0Profiles, geometry: GeometryBundle,
                    side: Side, sign: int) -> LayerSeries:
    k = _coefficients(geometry)
    c = k["c"]
    stiff = u1_3.d_xi().d_xi() * c - rate.vertical * (sign * c * k["dt_scale"])
    return stiff * side.sign - _transport(order0.vertical, geometry, k) * c ** 3


def choose_pressure_sign(u1_3: LayerSeries, rate: Order0Profiles, order0: Order0Profiles,
                         geometry: GeometryBundle, side: Side, axis: StretchedAxis) -> int:
    """
    Picks the sign of the time-derivative term in the order-2 pressure that balances the
    vertical order-1 layer momentum, by evaluating that balance on the axis.
    """
    k = _coefficients(geometry)
    c = k["c"]
    momentum = (rate.vertical * (c * k["dt_scale"])
                + _transport(order0.vertical, geometry, k) * (side.sign * c ** 3)
                - u1_3.d_xi().d_xi() * c)
    residuals = {}
    for sign in (1, -1):
        slope = _pressure_slope(u1_3, rate, order0, geometry, side, sign)
        residuals[sign] = float(np.abs((momentum + slope * side.sign).evaluate(axis.nodes)).max())
    chosen = min(residuals, key=lambda s: (residuals[s], -s))
    logger.info("order-2 pressure time-derivative sign %+d (%s side, residuals %+d: %.3e, %+d: %.3e)",
                chosen, side, 1, residuals[1], -1, residuals[-1])
    return chosen


def profile_order1(flow: FlowSnapshot | LimitState, geometry: GeometryBundle, side: Side, axis: StretchedAxis,
                   kernel: LayerKernel = LayerKernel.green, pack: DiagonalizationPack | None = None,
                   pressure_sign: int | None = None) -> Order1Profiles:
    """
    Builds the order-1 layer velocity (U1_h, U1_3) and the order-2 pressure P2.
    U1_h starts from -U1_int,h at the wall and adds Re Q w with w solving the diagonal
    layer equations; U1_3 = grad B . U1_h + s int_xi^inf F_0.
    """
    if isinstance(flow, LimitState):
        flow = FlowSnapshot.from_state(flow)
    if pack is None:
        pack = DiagonalizationPack(geometry)

    s = side.sign
    c = geometry.cos_gamma
    order0 = profile_order0(flow.u, geometry, side)
    rate = profile_order0(flow.u_t, geometry, side)
    forcing = forcing_terms(flow, geometry, side, pack, order0)

    modes = LayerSeries.stack([
        solve_layer_mode(forcing.G.component(j), pack.eigenvalues[j], pack.roots[j], kernel) for j in (0, 1)
    ])
    interior = interior_order1(flow.u, geometry)
    matching = -LayerSeries.spiral(interior.horizontal, c * rotate_e1(matvec(geometry.H0, interior.horizontal)))
    horizontal = matching + modes.matvec(pack.Q).real_part()

    offset = forcing.divergence.tail() * s
    vertical = horizontal.dot(geometry.grad_B) + offset

    if pressure_sign is None:
        pressure_sign = choose_pressure_sign(vertical, rate, order0, geometry, side, axis)
    pressure = -_pressure_slope(vertical, rate, order0, geometry, side, pressure_sign).tail()
    return Order1Profiles(horizontal, vertical, offset, pressure, pressure_sign, modes)


class Order2Profiles:
    """
    The order-2 vertical layer velocity and its interior counterpart. Horizontal
    order-2 components are zero.
    """

    vertical: LayerSeries
    source: LayerSeries
    interior: np.ndarray

    def __init__(self, vertical: LayerSeries, source: LayerSeries, interior: np.ndarray) -> None:
        self.vertical = vertical
        self.source = source
        self.interior = interior


def profile_order2(order1: Order1Profiles, geometry: GeometryBundle, side: Side) -> Order2Profiles:
    """
    Closes the order-2 divergence of the layer: U3_2 = s int_xi^inf I2 with
    I2 = div_xi U1_h - (3/2) c^2 xi Hg . dU1_h + (3/2) c^2 Hg . U1_h,
    and the interior value -U3_2(0) that restores the wall condition.
    """
    k = _coefficients(geometry)
    weight = 1.5 * k["c"] ** 2 * k["Hg"]
    u1 = order1.horizontal
    source = u1.divergence(geometry.grid) - u1.d_xi().dot(weight).times_xi() + u1.dot(weight)
    vertical = source.tail() * side.sign
    return Order2Profiles(vertical, source, -vertical.at_zero().real)


class LayerProfileSet:
    """
    Every layer correction of one side built from the same limit flow.
    """

    flow: FlowSnapshot
    side: Side
    axis: StretchedAxis
    kernel: LayerKernel
    order0: Order0Profiles
    interior: InteriorOrder1
    order1: Order1Profiles
    order2: Order2Profiles

    def __init__(self, flow: FlowSnapshot, side: Side, axis: StretchedAxis, kernel: LayerKernel,
                 order0: Order0Profiles, interior: InteriorOrder1, order1: Order1Profiles,
                 order2: Order2Profiles) -> None:
        self.flow = flow
        self.side = side
        self.axis = axis
        self.kernel = kernel
        self.order0 = order0
        self.interior = interior
        self.order1 = order1
        self.order2 = order2

    def fields(self) -> dict[str, LayerSeries]:
        return {
            "U0_h": self.order0.horizontal,
            "U0_3": self.order0.vertical,
            "P1": self.order0.pressure,
            "U1_h": self.order1.horizontal,
            "U1_3": self.order1.vertical,
            "P2": self.order1.pressure,
            "U3_2": self.order2.vertical,
        }

    def tabulate(self, name: str) -> np.ndarray:
        """
        Returns a layer field on the axis nodes, shape (..., Nx, Ny, M).
        """
        return self.fields()[name].real(self.axis.nodes)

    def check_tails(self) -> None:
        for name, series in self.fields().items():
            self.axis.check_tail(series.real(self.axis.nodes), name)

    def wall_mismatch(self) -> dict[str, float]:
        """
        Returns the largest |layer + interior| at the wall for every matched component.
        """
        interior_3 = self.interior.vertical(0.0 if self.side == Side.bottom else 2.0)
        o0, o1 = self.order0, self.order1
        return {
            "order0_h": float(np.abs(o0.horizontal.at_zero().real + self.flow.u).max()),
            "order1_h": float(np.abs(o1.horizontal.at_zero().real + self.interior.horizontal).max()),
            "order1_3": float(np.abs(o1.vertical.at_zero().real + interior_3).max()),
            "order2_3": float(np.abs(self.order2.vertical.at_zero().real + self.order2.interior).max()),
        }


def build_layer_profiles(flow: FlowSnapshot | LimitState, geometry: GeometryBundle, side: Side,
                         axis: StretchedAxis, kernel: LayerKernel = LayerKernel.green,
                         pack: DiagonalizationPack | None = None, pressure_sign: int | None = None,
                         check_tails: bool = True) -> LayerProfileSet:
    """
    Builds all orders of one side.
    """
    if isinstance(flow, LimitState):
        flow = FlowSnapshot.from_state(flow)
    if pack is None:
        pack = DiagonalizationPack(geometry)
    order0 = profile_order0(flow.u, geometry, side)
    interior = interior_order1(flow.u, geometry)
    order1 = profile_order1(flow, geometry, side, axis, kernel, pack, pressure_sign)
    order2 = profile_order2(order1, geometry, side)
    profiles = LayerProfileSet(flow, side, axis, kernel, order0, interior, order1, order2)
    if check_tails:
        profiles.check_tails()
    return profiles


def layer_equation_residual(profiles: LayerProfileSet, flow: FlowSnapshot, geometry: GeometryBundle,
                            pack: DiagonalizationPack) -> float:
    """
    Returns max |H0 U1_h'' + sec(g) E1 U1_h - rhs| on the axis, relative to max |rhs|.
    """
    forcing = forcing_terms(flow, geometry, profiles.side, pack)
    u1 = profiles.order1.horizontal
    lhs = u1.d_xi().d_xi().matvec(geometry.H0) + u1.map(rotate_e1) * (1.0 / geometry.cos_gamma)
    nodes = profiles.axis.nodes
    rhs = forcing.rhs.real(nodes)
    scale = max(float(np.abs(rhs).max()), 1e-300)
    return float(np.abs(lhs.real(nodes) - rhs).max()) / scale


def quadrature_audit(series: LayerSeries, axis: StretchedAxis) -> float:
    """
    Returns the largest difference between the closed-form tail integral of series and the
    axis quadrature of its samples, both truncated at z_max, relative to the sample size.
    """
    samples = series.real(axis.nodes)
    closed = series.tail().real(axis.nodes)
    closed = closed - closed[..., -1:]
    scale = max(float(np.abs(samples).max()), 1e-300)
    return float(np.abs(axis.tail(samples) - closed).max()) / scale


def profile_dump(profiles: LayerProfileSet, point: tuple[int, int]) -> tuple[list[str], list[list[float]]]:
    """
    Returns the CSV columns and rows of the layer profiles at a grid point, one row per axis node.
    """
    i, j = point
    nodes = profiles.axis.nodes
    u0_h = profiles.tabulate("U0_h")[:, i, j]
    u0_3 = profiles.tabulate("U0_3")[i, j]
    u1_h = profiles.tabulate("U1_h")[:, i, j]
    u1_3 = profiles.tabulate("U1_3")[i, j]
    p1 = profiles.tabulate("P1")[i, j]
    columns = ["z_tilde", "U0_1", "U0_2", "U0_3", "U1_1", "U1_2", "U1_3", "P1"]
    rows = [[nodes[k], u0_h[0, k], u0_h[1, k], u0_3[k], u1_h[0, k], u1_h[1, k], u1_3[k], p1[k]]
            for k in range(nodes.size)]
    return columns, rows
