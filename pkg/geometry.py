from __future__ import annotations

import logging
from enum import Enum

import numpy as np

from errors import GridError, SurfaceError
from spectral import PeriodicGrid

logger = logging.getLogger(__name__)

CURVATURE_THRESHOLD = 8.0 / 27.0
SLOPE_THRESHOLD = 1.0 / 8.0
HEIGHT_THRESHOLD = 1.0 / 4.0
CHANNEL_HEIGHT = 2.0

E1 = np.array([[0.0, 1.0], [-1.0, 0.0]])
CORIOLIS = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


class SurfacePreset(Enum):
    """
    The analytic boundary surfaces (e.g. "eggcarton").
    """
    flat = "flat"
    tilt = "tilt"
    bump = "bump"
    eggcarton = "eggcarton"
    paraboloid = "paraboloid"

    def __str__(self) -> str:
        return self.value


class AdmissibilityMode(Enum):
    """
    The two sets of boundary constraints under which the layer expansion is valid.
    """
    curved = "curved"
    nearly_flat = "nearly-flat"

    def __str__(self) -> str:
        return self.value


PRESET_DEFAULTS: dict[SurfacePreset, dict[str, float]] = {
    SurfacePreset.flat: {"c": 0.0},
    SurfacePreset.tilt: {"a": 0.2},
    SurfacePreset.bump: {"amp": 0.05, "width": 1.0},
    SurfacePreset.eggcarton: {"amp": 0.05, "kx": 1.0, "ky": 1.0},
    SurfacePreset.paraboloid: {},
}

# presets that are not periodic and only usable pointwise
ORACLE_ONLY = (SurfacePreset.tilt, SurfacePreset.paraboloid)


class AnalyticSurface:
    """
    A closed-form surface B(x, y) with exact first and second derivatives.
    """

    preset: SurfacePreset
    params: dict[str, float]
    lx: float
    ly: float

    def __init__(self, preset: SurfacePreset, params: dict[str, float] | None, lx: float, ly: float) -> None:
        """
        Creates the surface, filling missing parameters with the preset defaults.
        """
        given = dict(params or {})
        unknown = set(given) - set(PRESET_DEFAULTS[preset])
        if unknown:
            raise SurfaceError(f"unknown parameter(s) {sorted(unknown)} for preset {preset}")
        self.preset = preset
        self.params = {**PRESET_DEFAULTS[preset], **{k: float(v) for k, v in given.items()}}
        self.lx, self.ly = float(lx), float(ly)

    def __str__(self) -> str:
        args = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.preset}({args})"

    def derivatives(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, ...]:
        """
        Returns (B, Bx, By, Bxx, Bxy, Byy) at the given points.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        zero = np.zeros(np.broadcast(x, y).shape)
        p = self.params

        if self.preset == SurfacePreset.flat:
            return zero + p["c"], zero, zero, zero, zero, zero

        if self.preset == SurfacePreset.tilt:
            return p["a"] * x + zero, zero + p["a"], zero, zero, zero, zero

        if self.preset == SurfacePreset.paraboloid:
            return (x ** 2 + y ** 2) / 2 + zero, x + zero, y + zero, zero + 1.0, zero, zero + 1.0

        if self.preset == SurfacePreset.eggcarton:
            qx = 2 * np.pi * p["kx"] / self.lx
            qy = 2 * np.pi * p["ky"] / self.ly
            sx, cx = np.sin(qx * x), np.cos(qx * x)
            sy, cy = np.sin(qy * y), np.cos(qy * y)
            amp = p["amp"]
            return (amp * sx * sy, amp * qx * cx * sy, amp * qy * sx * cy,
                    -amp * qx ** 2 * sx * sy, amp * qx * qy * cx * cy, -amp * qy ** 2 * sx * sy)

        # bump: a periodic bell centred in the box
        qx, qy = 2 * np.pi / self.lx, 2 * np.pi / self.ly
        tx, ty = qx * (x - self.lx / 2), qy * (y - self.ly / 2)
        a = 1.0 / p["width"] ** 2
        b = p["amp"] * np.exp(-a * (2.0 - np.cos(tx) - np.cos(ty)))
        gx, gy = -a * qx * np.sin(tx), -a * qy * np.sin(ty)
        return (b, b * gx, b * gy,
                b * (gx ** 2 - a * qx ** 2 * np.cos(tx)), b * gx * gy, b * (gy ** 2 - a * qy ** 2 * np.cos(ty)))

    def is_periodic(self) -> bool:
        return self.preset not in ORACLE_ONLY


class SurfaceField:
    """
    A boundary surface sampled on a periodic grid, with where it came from.
    """

    grid: PeriodicGrid
    samples: np.ndarray
    provenance: str
    analytic: AnalyticSurface | None
    oracle: bool

    def __init__(self, grid: PeriodicGrid, samples: np.ndarray, provenance: str,
                 analytic: AnalyticSurface | None = None, oracle: bool = False) -> None:
        if samples.shape != (grid.nx, grid.ny):
            raise GridError(f"surface samples have shape {samples.shape}, grid is {grid.nx}x{grid.ny}")
        self.grid = grid
        self.samples = samples
        self.provenance = provenance
        self.analytic = analytic
        self.oracle = oracle

    def __str__(self) -> str:
        return f"SurfaceField ({self.provenance} on {self.grid})"

    def shifted(self, c: float) -> SurfaceField:
        """
        Returns the same surface raised by a constant c.
        """
        return SurfaceField(self.grid, self.samples + c, f"{self.provenance}+{c:g}", None, self.oracle)


def parse_preset(name: str) -> SurfacePreset:
    """
    Returns the preset of the given name, or raises SurfaceError.
    """
    try:
        return SurfacePreset(name)
    except ValueError:
        known = ", ".join(str(p) for p in SurfacePreset)
        raise SurfaceError(f"unknown surface preset '{name}' (known: {known})")


def _check_sampled_periodicity(samples: np.ndarray) -> None:
    """
    Rejects samples whose wrap-around jump is large next to the interior variation.
    """
    for axis in (0, 1):
        interior = np.abs(np.diff(samples, axis=axis))
        limit = 4.0 * (interior.max() if interior.size else 0.0) + 1e-12
        jump = np.abs(np.take(samples, 0, axis=axis) - np.take(samples, -1, axis=axis))
        worst = int(np.argmax(jump))
        if jump[worst] > limit:
            location = (samples.shape[0] - 1, worst) if axis == 0 else (worst, samples.shape[1] - 1)
            raise SurfaceError(f"sampled surface is not periodic, edge jump {jump[worst]:.3e}", location)


def build_surface(preset: str, params: dict[str, float] | None, grid: PeriodicGrid,
                  oracle: bool = False) -> SurfaceField:
    """
    Builds a SurfaceField from a preset name or from a sampled surface file.
    A preset name that is an existing file path is read as a sampled surface.
    Non-periodic presets are only accepted when oracle is True.
    """
    from field_io import file_check, read_sampled_surface

    # check if preset refers to a sampled file
    if preset not in {p.value for p in SurfacePreset} and file_check(preset):
        nx, ny, lx, ly, samples = read_sampled_surface(preset)
        if (nx, ny) != (grid.nx, grid.ny) or not np.allclose((lx, ly), (grid.lx, grid.ly)):
            raise GridError(f"surface file {preset} is {nx}x{ny} on {lx:g}x{ly:g}, grid is {grid}")
        _check_sampled_periodicity(samples)
        return SurfaceField(grid, samples, f"file:{preset}")

    analytic = AnalyticSurface(parse_preset(preset), params, grid.lx, grid.ly)

    # check if the analytic surface wraps around the box
    if not oracle:
        b_x0 = analytic.derivatives(np.zeros_like(grid.y), grid.y)[0]
        b_xl = analytic.derivatives(np.full_like(grid.y, grid.lx), grid.y)[0]
        b_y0 = analytic.derivatives(grid.x, np.zeros_like(grid.x))[0]
        b_yl = analytic.derivatives(grid.x, np.full_like(grid.x, grid.ly))[0]
        scale = 1e-12 * (1.0 + np.abs(b_x0).max() + np.abs(b_y0).max())
        if np.abs(b_xl - b_x0).max() > scale:
            raise SurfaceError(f"{analytic} is not periodic in x", (grid.nx - 1, int(np.argmax(np.abs(b_xl - b_x0)))))
        if np.abs(b_yl - b_y0).max() > scale:
            raise SurfaceError(f"{analytic} is not periodic in y", (int(np.argmax(np.abs(b_yl - b_y0))), grid.ny - 1))

    samples = analytic.derivatives(grid.X, grid.Y)[0]
    logger.debug("built surface %s on %s", analytic, grid)
    return SurfaceField(grid, samples, str(analytic), analytic, oracle)


class GeometryBundle:
    """
    The differential geometry of the surface at every grid point, for given epsilon and nu.
    Matrices are stored as (2, 2, Nx, Ny) arrays.
    """

    surface: SurfaceField | None
    epsilon: float
    nu: float
    B: np.ndarray
    Bx: np.ndarray
    By: np.ndarray
    Bxx: np.ndarray
    Bxy: np.ndarray
    Byy: np.ndarray
    lap_B: np.ndarray
    cos_alpha: np.ndarray
    cos_beta: np.ndarray
    cos_gamma: np.ndarray
    H: np.ndarray
    H0: np.ndarray
    K_G: np.ndarray
    K_A: np.ndarray
    delta: np.ndarray
    delta_n: np.ndarray

    def __init__(self, derivatives: tuple[np.ndarray, ...], epsilon: float, nu: float,
                 surface: SurfaceField | None = None) -> None:
        """
        Fills every geometric quantity from (B, Bx, By, Bxx, Bxy, Byy).
        """
        try:
            assert epsilon > 0 and nu > 0
        except AssertionError:
            raise ValueError(f"epsilon and nu must be positive, got epsilon={epsilon}, nu={nu}")

        self.surface = surface
        self.epsilon, self.nu = float(epsilon), float(nu)
        self.B, self.Bx, self.By, self.Bxx, self.Bxy, self.Byy = (np.asarray(d, dtype=float) for d in derivatives)
        self.lap_B = self.Bxx + self.Byy

        slope2 = self.Bx ** 2 + self.By ** 2
        self.cos_gamma = 1.0 / np.sqrt(1.0 + slope2)
        self.cos_alpha = -self.Bx * self.cos_gamma
        self.cos_beta = -self.By * self.cos_gamma

        self.H = np.array([[self.Bxx, self.Bxy], [self.Bxy, self.Byy]])
        self.H0 = np.array([[1.0 + self.Bx ** 2, self.Bx * self.By], [self.Bx * self.By, 1.0 + self.By ** 2]])

        det_h0 = 1.0 + slope2
        det_h = self.Bxx * self.Byy - self.Bxy ** 2
        self.K_G = det_h / det_h0 ** 2
        self.K_A = 0.5 * det_h0 ** -1.5 * (
            self.Byy * (1.0 + self.Bx ** 2) - 2.0 * self.Bxy * self.Bx * self.By + self.Bxx * (1.0 + self.By ** 2)
        )

        self.delta_n = np.sqrt(self.nu) * self.epsilon * self.cos_gamma ** -0.5
        self.delta = np.sqrt(self.nu) * self.epsilon * self.cos_gamma ** -1.5

    @property
    def grid(self) -> PeriodicGrid:
        return self.surface.grid

    @property
    def grad_B(self) -> np.ndarray:
        return np.array([self.Bx, self.By])

    @property
    def grad_B_perp(self) -> np.ndarray:
        """
        Returns (-By, Bx), the slope turned by a quarter turn.
        """
        return np.array([-self.By, self.Bx])

    @property
    def det_H0(self) -> np.ndarray:
        return 1.0 + self.Bx ** 2 + self.By ** 2

    @property
    def det_H(self) -> np.ndarray:
        return self.Bxx * self.Byy - self.Bxy ** 2

    @property
    def damping_coefficient(self) -> np.ndarray:
        """
        Returns sqrt(nu / (2 cos(gamma))).
        """
        return np.sqrt(self.nu / (2.0 * self.cos_gamma))

    def is_flat(self) -> bool:
        return bool(np.all(self.Bx == 0) and np.all(self.By == 0) and np.all(self.H == 0))

    def with_epsilon(self, epsilon: float) -> GeometryBundle:
        """
        Returns the same geometry with a different epsilon.
        """
        derivs = (self.B, self.Bx, self.By, self.Bxx, self.Bxy, self.Byy)
        return GeometryBundle(derivs, epsilon, self.nu, self.surface)

    def normal_vector(self) -> np.ndarray:
        return np.array([self.cos_alpha, self.cos_beta, self.cos_gamma])

    def __str__(self) -> str:
        return (f"GeometryBundle (eps={self.epsilon:g}, nu={self.nu:g}, "
                f"max|grad B|={np.sqrt(self.Bx ** 2 + self.By ** 2).max():.4g})")


def derive_geometry(surface: SurfaceField, epsilon: float, nu: float, exact: bool | None = None) -> GeometryBundle:
    """
    Computes the geometry of a sampled surface.
    Derivatives are spectral, or exact for analytic surfaces when exact (default: oracle surfaces).
    """
    if exact is None:
        exact = surface.oracle
    if exact:
        if surface.analytic is None:
            raise SurfaceError(f"exact derivatives requested for {surface.provenance}, which has no closed form")
        derivs = surface.analytic.derivatives(surface.grid.X, surface.grid.Y)
        return GeometryBundle(derivs, epsilon, nu, surface)

    grid = surface.grid
    b = surface.samples
    b_hat = grid.fft(b)
    kx, ky = grid.kx, grid.ky
    derivs = (
        b,
        grid.ifft(1j * kx * b_hat),
        grid.ifft(1j * ky * b_hat),
        grid.ifft(-kx * kx * b_hat),
        grid.ifft(-kx * ky * b_hat),
        grid.ifft(-ky * ky * b_hat),
    )
    return GeometryBundle(derivs, epsilon, nu, surface)


def derive_geometry_at(analytic: AnalyticSurface, x: np.ndarray, y: np.ndarray,
                       epsilon: float, nu: float) -> GeometryBundle:
    """
    Pointwise oracle: exact geometry of an analytic surface at arbitrary points.
    """
    return GeometryBundle(analytic.derivatives(x, y), epsilon, nu, None)


def frame_from_cosines(cos_alpha: np.ndarray, cos_beta: np.ndarray, cos_gamma: np.ndarray) -> np.ndarray:
    """
    Returns the rotations R0 (shape (3, 3, ...)) taking the normal (cos a, cos b, cos g) to e3.
    """
    s = np.sqrt(cos_alpha ** 2 + cos_gamma ** 2)
    cos_t, sin_t = cos_gamma / s, cos_alpha / s
    cos_p, sin_p = s, cos_beta
    zero = np.zeros_like(s)
    return np.array([
        [cos_t, zero, -sin_t],
        [-sin_t * sin_p, cos_p, -cos_t * sin_p],
        [sin_t * cos_p, sin_p, cos_t * cos_p],
    ])


def local_frame(bundle: GeometryBundle, point: tuple[int, int]) -> np.ndarray:
    """
    Returns the 3x3 rotation R0 at grid index point that flattens the surface locally.
    """
    i, j = point
    nx, ny = bundle.cos_gamma.shape[:2]
    try:
        assert 0 <= i < nx and 0 <= j < ny
    except AssertionError:
        raise ValueError(f"point {point} outside the {nx}x{ny} grid")
    return frame_from_cosines(bundle.cos_alpha[i, j], bundle.cos_beta[i, j], bundle.cos_gamma[i, j])


def rotated_coriolis(frame: np.ndarray) -> np.ndarray:
    """
    Returns the Coriolis matrix seen in the flattened frame, R0 R R0^T.
    """
    return frame @ CORIOLIS @ frame.T


def e1h_eigenvalues(bundle: GeometryBundle) -> np.ndarray:
    """
    Returns the pair +-sqrt(-det H) of eigenvalues of E1 H at every point.
    """
    root = np.sqrt(-bundle.det_H + 0j)
    return np.array([root, -root])


def hessian_eigen_bounds(bundle: GeometryBundle) -> dict[str, float]:
    """
    Returns the largest eigenvalue magnitudes of H and E1 H over the grid.
    """
    mean = 0.5 * (bundle.Bxx + bundle.Byy)
    spread = np.sqrt(0.25 * (bundle.Bxx - bundle.Byy) ** 2 + bundle.Bxy ** 2)
    return {
        "max_abs_eig_H": float(np.max(np.abs(mean) + spread)),
        "max_abs_eig_E1H": float(np.max(np.sqrt(np.abs(bundle.det_H)))),
    }


class ConditionResult:
    """
    One admissibility condition: the worst value over the grid and its threshold.
    """

    name: str
    worst: float
    threshold: float
    margin: float
    index: tuple[int, int]
    location: tuple[float, float]

    def __init__(self, name: str, worst: float, threshold: float, margin: float,
                 index: tuple[int, int], location: tuple[float, float]) -> None:
        self.name = name
        self.worst = worst
        self.threshold = threshold
        self.margin = margin
        self.index = index
        self.location = location

    @property
    def passed(self) -> bool:
        return self.worst < self.threshold - self.margin

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{self.name}: worst {self.worst:.6g} < {self.threshold:.6g} ... {verdict}"


class AdmissibilityReport:
    """
    The outcome of checking every condition of one admissibility mode.
    """

    mode: AdmissibilityMode
    conditions: list[ConditionResult]

    def __init__(self, mode: AdmissibilityMode, conditions: list[ConditionResult]) -> None:
        self.mode = mode
        self.conditions = conditions

    @property
    def verdict(self) -> bool:
        return all(c.passed for c in self.conditions)

    def offending(self) -> list[ConditionResult]:
        return [c for c in self.conditions if not c.passed]

    def __str__(self) -> str:
        lines = [f"admissibility ({self.mode}): {'PASS' if self.verdict else 'FAIL'}"]
        lines.extend(f"  {c}" for c in self.conditions)
        return "\n".join(lines)


def _worst(name: str, values: np.ndarray, threshold: float, margin: float, bundle: GeometryBundle) -> ConditionResult:
    index = np.unravel_index(int(np.argmax(values)), values.shape)
    index = tuple(int(k) for k in index)
    if bundle.surface is not None:
        location = (float(bundle.surface.grid.X[index]), float(bundle.surface.grid.Y[index]))
    else:
        location = (float("nan"), float("nan"))
    return ConditionResult(name, float(values[index]), threshold, margin, index, location)


def check_admissibility(bundle: GeometryBundle, mode: AdmissibilityMode = AdmissibilityMode.curved,
                        sigma: float = 0.5, epsilon: float | None = None, margin: float = 0.0) -> AdmissibilityReport:
    """
    Checks the boundary constraints of the given mode. Failing conditions are reported, not raised.
    """
    try:
        assert margin >= 0
        assert mode != AdmissibilityMode.nearly_flat or sigma > 0
    except AssertionError:
        raise ValueError(f"admissibility needs margin >= 0 and sigma > 0, got margin={margin}, sigma={sigma}")
    if epsilon is None:
        epsilon = bundle.epsilon

    slope_ratio = (bundle.cos_alpha ** 2 + bundle.cos_beta ** 2) / bundle.cos_gamma ** 2
    conditions = [
        _worst("height |B|", np.abs(bundle.B), HEIGHT_THRESHOLD, margin, bundle),
        _worst("slope (cos^2 a + cos^2 b) / cos^2 g", slope_ratio, SLOPE_THRESHOLD, margin, bundle),
    ]
    if mode == AdmissibilityMode.curved:
        curvature = 2.0 * np.abs(bundle.K_A) + np.sqrt(np.abs(bundle.K_G))
        conditions.append(_worst("curvature 2|K_A| + sqrt|K_G|", curvature, CURVATURE_THRESHOLD, margin, bundle))
    else:
        nearly_flat = np.abs(bundle.K_A) + np.sqrt(np.abs(bundle.K_G)) + np.sqrt(bundle.Bx ** 2 + bundle.By ** 2)
        conditions.append(_worst("near-flatness |K_A| + sqrt|K_G| + |grad B|", nearly_flat,
                                 float(epsilon ** sigma), margin, bundle))

    report = AdmissibilityReport(mode, conditions)
    logger.info("admissibility %s: %s", mode, "PASS" if report.verdict else "FAIL")
    return report


def create_example_surfaces(grid: PeriodicGrid) -> dict[str, SurfaceField]:
    """
    Creates the periodic example surfaces on a grid.
    """
    return {
        "flat": build_surface("flat", {"c": 0.0}, grid),
        "eggcarton": build_surface("eggcarton", {"amp": 0.05, "kx": 1, "ky": 1}, grid),
        "bump": build_surface("bump", {"amp": 0.05, "width": 1.0}, grid),
    }


if __name__ == "__main__":
    grid = PeriodicGrid(32, 32)
    for name, surface in create_example_surfaces(grid).items():
        bundle = derive_geometry(surface, 1e-2, 0.1)
        print(surface)
        print(check_admissibility(bundle))
