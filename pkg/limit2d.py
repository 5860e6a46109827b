from __future__ import annotations

import logging
from enum import Enum

import numpy as np

from errors import CflViolationError, HorizonError, NumericalBlowupError
from geometry import GeometryBundle, check_admissibility
from spectral import PeriodicGrid

logger = logging.getLogger(__name__)

CFL_LIMIT = 0.8
MIN_SNAPSHOTS = 10
ZERO_NORM = 1e-14
VORTICITY_AUDIT_TOLERANCE = 1e-6


class InitialPreset(Enum):
    """
    The initial horizontal flows the limit system can start from.
    """
    taylor_green = "taylor-green"
    band_limited_random = "band-limited-random"
    bump = "bump"

    def __str__(self) -> str:
        return self.value


def speed(u: np.ndarray) -> np.ndarray:
    return np.sqrt(u[0] ** 2 + u[1] ** 2)


def matvec(m: np.ndarray, u: np.ndarray) -> np.ndarray:
    """
    Pointwise product of a (2, 2, ...) matrix field with a (2, ...) vector field.
    """
    return np.einsum("ij...,j...->i...", m, u)


def rotate_e1(u: np.ndarray) -> np.ndarray:
    """
    Returns E1 u = (u2, -u1).
    """
    return np.array([u[1], -u[0]])


def leray_project(grid: PeriodicGrid, f: np.ndarray) -> np.ndarray:
    """
    Returns the divergence free part of the vector field f (shape (2, Nx, Ny)).
    The horizontal mean is kept.
    """
    return np.array(grid.leray_project(f[0], f[1]))


def vorticity(grid: PeriodicGrid, u: np.ndarray) -> np.ndarray:
    """
    Returns omega = d(u2)/dx - d(u1)/dy.
    """
    return grid.curl(u[0], u[1])


def velocity_from_vorticity(grid: PeriodicGrid, omega: np.ndarray,
                            mean_velocity: np.ndarray | None = None) -> np.ndarray:
    """
    Recovers the divergence free velocity of a mean free vorticity through the stream
    function psi = lap^-1 omega, u = (-dpsi/dy, dpsi/dx) + mean_velocity.
    """
    scale = max(1.0, float(np.abs(omega).max()))
    mean = float(grid.mean(omega))
    if abs(mean) > 1e-10 * scale:
        raise ValueError(f"vorticity must be mean free for inversion, mean is {mean:.3e}")

    psi = grid.inverse_laplacian(omega)
    u = np.array([-grid.ddy(psi), grid.ddx(psi)])
    if mean_velocity is not None:
        u = u + np.asarray(mean_velocity, dtype=float).reshape(2, 1, 1)
    return u


class InitialData:
    """
    A divergence free initial flow together with the smallness figures of its vorticity.
    """

    preset: InitialPreset
    amplitude: float
    seed: int
    smoothness: float
    well_prepared: bool
    u: np.ndarray
    omega_l2: float
    u_linf: float
    small_data_bound: float

    def __init__(self, preset: InitialPreset, u: np.ndarray, grid: PeriodicGrid, nu: float,
                 amplitude: float, seed: int, smoothness: float, well_prepared: bool) -> None:
        self.preset = preset
        self.u = u
        self.amplitude = amplitude
        self.seed = seed
        self.smoothness = smoothness
        self.well_prepared = well_prepared
        self.omega_l2 = grid.l2_norm(vorticity(grid, u))
        self.u_linf = float(speed(u).max())
        self.small_data_bound = float(np.sqrt(nu / 3.0))

    @property
    def small_data(self) -> bool:
        """
        Returns True if max|u0| <= sqrt(nu/3), the data condition of the nearly flat regime.
        """
        return self.u_linf <= self.small_data_bound

    def __str__(self) -> str:
        return (f"InitialData ({self.preset}, max|u|={self.u_linf:.4g}, "
                f"||omega||={self.omega_l2:.4g}, small data: {self.small_data})")


def _stream_function(grid: PeriodicGrid, preset: InitialPreset, seed: int, k_cut: int,
                     smoothness: float) -> np.ndarray:
    if preset == InitialPreset.taylor_green:
        a, b = 2 * np.pi / grid.lx, 2 * np.pi / grid.ly
        return -np.sin(a * grid.X) * np.sin(b * grid.Y) / max(a, b)

    if preset == InitialPreset.bump:
        # periodic Gaussian vortex centred in the box
        tx = 2 * np.pi * (grid.X - grid.lx / 2) / grid.lx
        ty = 2 * np.pi * (grid.Y - grid.ly / 2) / grid.ly
        return np.exp(-4.0 * (2.0 - np.cos(tx) - np.cos(ty)))

    rng = np.random.default_rng(seed)
    nx_i, ny_i = np.meshgrid(np.fft.fftfreq(grid.nx) * grid.nx, np.fft.fftfreq(grid.ny) * grid.ny, indexing="ij")
    n = np.sqrt(nx_i ** 2 + ny_i ** 2)
    band = (n >= 1) & (n <= k_cut)
    spectrum = np.where(band, np.where(band, n, 1.0) ** -(smoothness + 2.0), 0.0)
    phases = rng.standard_normal((grid.nx, grid.ny)) + 1j * rng.standard_normal((grid.nx, grid.ny))
    return np.fft.ifft2(spectrum * phases).real


def make_initial_data(grid: PeriodicGrid, preset: InitialPreset | str, nu: float, amplitude: float = 1.0,
                      seed: int = 0, k_cut: int = 4, smoothness: float = 2.0, well_prepared: bool = False,
                      epsilon: float | None = None, sigma: float | None = None) -> InitialData:
    """
    Creates divergence free initial data with max|u| = amplitude.
    With well_prepared, the flow is rescaled instead so that ||omega||_L2 = epsilon**sigma.
    smoothness shapes the random spectrum and is otherwise metadata.
    """
    preset = InitialPreset(preset)
    try:
        assert amplitude >= 0 and k_cut >= 1
        assert not well_prepared or (epsilon is not None and sigma is not None and epsilon > 0 and sigma > 0)
    except AssertionError:
        raise ValueError("initial data needs amplitude >= 0, k_cut >= 1, and epsilon, sigma > 0 when well prepared")

    psi = _stream_function(grid, preset, seed, k_cut, smoothness)
    u = np.array([-grid.ddy(psi), grid.ddx(psi)])
    peak = float(speed(u).max())
    if peak > 0:
        u = u * (amplitude / peak)

    if well_prepared:
        omega_l2 = grid.l2_norm(vorticity(grid, u))
        if omega_l2 > 0:
            u = u * (epsilon ** sigma / omega_l2)

    data = InitialData(preset, u, grid, nu, amplitude, seed, smoothness, well_prepared)
    logger.info("initial data: %s", data)
    return data


class LimitSystem:
    """
    The damped rotational 2D limit system over a surface:
        u_t + (u . grad) u + c (H0 - sec(g) E1) u + grad p = 0,   div u = 0,
    with c = sqrt(nu / (2 cos(g))). advection=False gives the linear limit system.
    """

    geometry: GeometryBundle
    grid: PeriodicGrid
    advection: bool
    coefficient: np.ndarray
    sec_gamma: np.ndarray

    def __init__(self, geometry: GeometryBundle, advection: bool = True) -> None:
        self.geometry = geometry
        self.grid = geometry.grid
        self.advection = advection
        self.coefficient = geometry.damping_coefficient
        self.sec_gamma = 1.0 / geometry.cos_gamma

        report = check_admissibility(geometry)
        if not report.verdict:
            logger.warning("limit system over a non-admissible surface:\n%s", report)

    @property
    def nu(self) -> float:
        return self.geometry.nu

    def damping(self, u: np.ndarray) -> np.ndarray:
        """
        Returns the damping-rotation term c (H0 u - sec(g) E1 u), pointwise in physical space.
        """
        return self.coefficient * (matvec(self.geometry.H0, u) - self.sec_gamma * rotate_e1(u))

    def nonlinear(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """
        Returns the dealiased (a . grad) b, or zero for the linear system.
        """
        if not self.advection:
            return np.zeros_like(b)
        return np.array([self.grid.advect(a[0], a[1], b[0]), self.grid.advect(a[0], a[1], b[1])])

    def rhs(self, u: np.ndarray) -> np.ndarray:
        """
        Returns the projected tendency. Its mean is removed: on the torus the uniform part
        of the forcing is balanced by a uniform pressure gradient, see pressure.
        """
        return self._mean_free(leray_project(self.grid, -self.nonlinear(u, u) - self.damping(u)))

    def _mean_free(self, f: np.ndarray) -> np.ndarray:
        return f - self.grid.mean(f)[:, np.newaxis, np.newaxis]

    def second_time_derivative(self, u: np.ndarray) -> np.ndarray:
        """
        Returns u_tt from differentiating the projected tendency along the flow.
        """
        u_t = self.rhs(u)
        forcing = self.nonlinear(u_t, u) + self.nonlinear(u, u_t) + self.damping(u_t)
        return self._mean_free(leray_project(self.grid, -forcing))

    def vertical_velocity(self, u: np.ndarray) -> np.ndarray:
        return self.geometry.Bx * u[0] + self.geometry.By * u[1]

    def pressure(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Returns (p, P0_int, G): the mean free pressure of the limit system, the leading
        interior pressure lap^-1 omega and the uniform pressure gradient G that balances
        the mean of the forcing, so that u_t = -(forcing) - grad p - G.
        """
        forcing = self.nonlinear(u, u) + self.damping(u)
        p = -self.grid.inverse_laplacian(self.grid.divergence(forcing[0], forcing[1]))
        p0_int = self.grid.inverse_laplacian(vorticity(self.grid, u))
        return p, p0_int, -self.grid.mean(forcing)

    def energy_budget(self, u: np.ndarray) -> dict[str, float]:
        """
        Returns the contributions of advection, symmetric damping and rotation to d/dt (1/2)||u||^2.
        """
        area = self.grid.cell_area
        symmetric = self.coefficient * matvec(self.geometry.H0, u)
        rotation = self.coefficient * self.sec_gamma * rotate_e1(u)
        return {
            "advection": -float(np.sum(u * self.nonlinear(u, u)) * area),
            "damping": -float(np.sum(u * symmetric) * area),
            "rotation": float(np.sum(u * rotation) * area),
        }

    def required_dt(self, u: np.ndarray) -> float:
        peak = float(speed(u).max())
        if peak == 0.0:
            return np.inf
        return CFL_LIMIT * min(self.grid.dx, self.grid.dy) / peak


class LimitState:
    """
    The horizontal limit flow at time t, with the quantities slaved to it.
    """

    system: LimitSystem
    u: np.ndarray
    t: float

    def __init__(self, system: LimitSystem, u: np.ndarray, t: float = 0.0) -> None:
        self.system = system
        self.u = np.asarray(u, dtype=float)
        self.t = float(t)

    @property
    def grid(self) -> PeriodicGrid:
        return self.system.grid

    @property
    def geometry(self) -> GeometryBundle:
        return self.system.geometry

    @property
    def omega(self) -> np.ndarray:
        return vorticity(self.grid, self.u)

    @property
    def u3(self) -> np.ndarray:
        return self.system.vertical_velocity(self.u)

    def tendency(self) -> np.ndarray:
        return self.system.rhs(self.u)

    def second_tendency(self) -> np.ndarray:
        return self.system.second_time_derivative(self.u)

    def __str__(self) -> str:
        return f"LimitState (t={self.t:.4g}, ||u||={self.grid.l2_norm(*self.u):.4g})"


def limit_rhs(state: LimitState) -> np.ndarray:
    """
    Returns the projected tendency of the limit system at state.
    """
    tendency = state.tendency()
    if not np.all(np.isfinite(tendency)):
        raise NumericalBlowupError(f"non-finite tendency at t={state.t:.6g}", snapshot=state)
    return tendency


def step(state: LimitState, dt: float) -> LimitState:
    """
    Advances the state by one RK4 step and re-projects onto divergence free fields.
    """
    system = state.system
    required = system.required_dt(state.u)
    if dt > required:
        raise CflViolationError(dt, required)

    u = state.u
    k1 = system.rhs(u)
    k2 = system.rhs(u + 0.5 * dt * k1)
    k3 = system.rhs(u + 0.5 * dt * k2)
    k4 = system.rhs(u + dt * k3)
    u_new = leray_project(system.grid, u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))

    if not np.all(np.isfinite(u_new)):
        raise NumericalBlowupError(f"non-finite velocity after step to t={state.t + dt:.6g}", snapshot=state)
    return LimitState(system, u_new, state.t + dt)


def norm_row(state: LimitState, ls_exponents: tuple[float, ...] = ()) -> dict[str, float]:
    """
    Returns the monitored norms of a state: t, L2_u, L2_omega, Linf_u, Linf_grad_u and L^s norms.
    """
    grid = state.grid
    u = state.u
    grad = [grid.ddx(u[0]), grid.ddy(u[0]), grid.ddx(u[1]), grid.ddy(u[1])]
    row = {
        "t": state.t,
        "L2_u": grid.l2_norm(*u),
        "L2_omega": grid.l2_norm(state.omega),
        "Linf_u": float(speed(u).max()),
        "Linf_grad_u": float(np.sqrt(sum(g ** 2 for g in grad)).max()),
    }
    for s in ls_exponents:
        row[f"Ls_u_{s:g}"] = float((np.sum(speed(u) ** s) * grid.cell_area) ** (1.0 / s))
    return row


NORM_COLUMNS = ["t", "L2_u", "L2_omega", "Linf_u", "Linf_grad_u"]


class Trajectory:
    """
    Snapshots and norm series of one limit system run.
    """

    system: LimitSystem
    states: list[LimitState]
    norms: list[dict[str, float]]

    def __init__(self, system: LimitSystem) -> None:
        self.system = system
        self.states = []
        self.norms = []

    def record(self, state: LimitState, ls_exponents: tuple[float, ...] = ()) -> None:
        self.states.append(state)
        self.norms.append(norm_row(state, ls_exponents))

    def series(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.norms])

    @property
    def times(self) -> np.ndarray:
        return self.series("t")

    @property
    def final(self) -> LimitState:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.states)


def simulate(state: LimitState, t_end: float, dt: float, stride: int = 1,
             ls_exponents: tuple[float, ...] = (4.0,)) -> Trajectory:
    """
    Integrates from state up to t_end, recording every stride steps and at the end.
    dt is shortened so that the steps land exactly on t_end.
    """
    try:
        assert t_end >= state.t and dt > 0 and stride >= 1
    except AssertionError:
        raise ValueError(f"cannot integrate from t={state.t} to {t_end} with dt={dt}, stride={stride}")

    n_steps = int(np.ceil((t_end - state.t) / dt - 1e-9))
    if n_steps > 0:
        dt = (t_end - state.t) / n_steps
    trajectory = Trajectory(state.system)
    trajectory.record(state, ls_exponents)
    for n in range(1, n_steps + 1):
        state = step(state, dt)
        if n % stride == 0 or n == n_steps:
            trajectory.record(state, ls_exponents)
            logger.debug("t=%.4f L2_u=%.6e", state.t, trajectory.norms[-1]["L2_u"])
    return trajectory


# vorticity formulation

def vorticity_sources(system: LimitSystem, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Returns the (curvature, slope) sources of the vorticity equation:
        curvature = -c sec(g) grad(B)^T E1 (K_A - 3/2 cos(g) H - 3/2 cos(g)^2 E1 H) u,
        slope     = c (Bx^2 u1_y + 2 Bx By u2_y - By^2 u2_x),
    with c = sqrt(nu / (2 cos(g))). Both vanish over flat ground.
    """
    g = system.geometry
    grid = system.grid
    c, cg = system.coefficient, g.cos_gamma
    e1_h = np.array([[g.Bxy, g.Byy], [-g.Bxx, -g.Bxy]])
    identity = np.array([[np.ones_like(cg), np.zeros_like(cg)], [np.zeros_like(cg), np.ones_like(cg)]])
    bracket = g.K_A * identity - 1.5 * cg * g.H - 1.5 * cg ** 2 * e1_h
    turned = rotate_e1(matvec(bracket, u))
    curvature = -c * system.sec_gamma * np.einsum("i...,i...->...", g.grad_B, turned)

    slope = c * (g.Bx ** 2 * grid.ddy(u[0]) + 2.0 * g.Bx * g.By * grid.ddy(u[1]) - g.By ** 2 * grid.ddx(u[1]))
    return curvature, slope


def vorticity_rhs(omega: np.ndarray, system: LimitSystem) -> np.ndarray:
    """
    Returns the tendency of the limit system in vorticity form:
        omega_t = -(u . grad) omega - c omega + curvature + slope,
    with the mean free u recovered through the stream function.
    """
    grid = system.grid
    u = velocity_from_vorticity(grid, omega)
    if system.advection:
        transport = grid.advect(u[0], u[1], omega)
    else:
        transport = np.zeros_like(omega)
    curvature, slope = vorticity_sources(system, u)
    d_omega = -transport - system.coefficient * omega + curvature + slope
    # the curl of a periodic field has zero mean; drop the aliased remainder
    d_omega = d_omega - grid.mean(d_omega)
    if not np.all(np.isfinite(d_omega)):
        raise NumericalBlowupError("non-finite vorticity tendency")
    return d_omega


def integrate_vorticity(system: LimitSystem, omega: np.ndarray, t_end: float, dt: float) -> np.ndarray:
    """
    RK4 integration of the vorticity form from t = 0 to t_end.
    """
    n_steps = max(1, int(np.ceil(t_end / dt - 1e-9)))
    dt = t_end / n_steps
    w = omega
    for _ in range(n_steps):
        k1 = vorticity_rhs(w, system)
        k2 = vorticity_rhs(w + 0.5 * dt * k1, system)
        k3 = vorticity_rhs(w + 0.5 * dt * k2, system)
        k4 = vorticity_rhs(w + dt * k3, system)
        w = w + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        # keep the vorticity mean free
        w = w - system.grid.mean(w)
    return w


def audit_vorticity_source(system: LimitSystem, u: np.ndarray) -> float:
    """
    Returns the relative difference between the damping part of the vorticity tendency,
    -c omega + curvature + slope, and the spectral curl of -D u it stands for.
    """
    grid = system.grid
    damping = system.damping(u)
    spectral = -grid.curl(damping[0], damping[1])
    curvature, slope = vorticity_sources(system, u)
    explicit = -system.coefficient * vorticity(grid, u) + curvature + slope
    scale = max(grid.l2_norm(spectral), 1e-300)
    discrepancy = grid.l2_norm(explicit - spectral) / scale
    if discrepancy > VORTICITY_AUDIT_TOLERANCE:
        logger.warning("vorticity sources differ from the curl of the damping by %.3e", discrepancy)
    else:
        logger.info("vorticity source audit: relative discrepancy %.3e", discrepancy)
    return discrepancy


# decay diagnostics

class DecayFit:
    """
    A least-squares fit log(norm) = a - rate * t over part of a trajectory.
    """

    name: str
    rate: float | None
    intercept: float | None
    n_points: int

    def __init__(self, name: str, rate: float | None, intercept: float | None, n_points: int) -> None:
        self.name = name
        self.rate = rate
        self.intercept = intercept
        self.n_points = n_points

    @property
    def skipped(self) -> bool:
        return self.rate is None

    def __str__(self) -> str:
        if self.skipped:
            return f"{self.name}: fit skipped"
        return f"{self.name}: rate {self.rate:.6g} ({self.n_points} points)"


def fit_rate(name: str, times: np.ndarray, values: np.ndarray) -> DecayFit:
    """
    Fits an exponential rate to a positive series. Series reaching ZERO_NORM are skipped.
    """
    if values.size < 2 or np.min(values) <= ZERO_NORM:
        return DecayFit(name, None, None, int(values.size))
    slope, intercept = np.polyfit(times, np.log(values), 1)
    return DecayFit(name, float(-slope), float(intercept), int(values.size))


class DecayDiagnostics:
    """
    Fitted decay rates of a trajectory next to the guaranteed bounds.
    """

    fits: dict[str, DecayFit]
    conservative_bound: float    # sqrt(2 nu) / 8
    gradient_bound: float        # sqrt(nu / 2)
    exact_flat_rate: float       # sqrt(2 nu), energy rate over a flat surface

    def __init__(self, fits: dict[str, DecayFit], nu: float) -> None:
        self.fits = fits
        self.conservative_bound = np.sqrt(2.0 * nu) / 8.0
        self.gradient_bound = np.sqrt(nu / 2.0)
        self.exact_flat_rate = np.sqrt(2.0 * nu)

    def rate(self, name: str) -> float | None:
        return self.fits[name].rate

    def __str__(self) -> str:
        return "\n".join(str(f) for f in self.fits.values())


def decay_diagnostics(trajectory: Trajectory, discard_fraction: float = 0.0) -> DecayDiagnostics:
    """
    Fits decay rates of the energy ||u||^2, ||omega||^2, ||u||^2 + ||omega||^2, ||u||_L2,
    ||omega||_L2, ||u||_Linf, ||grad u||_Linf and the recorded L^s norms.
    The first discard_fraction of the horizon is left out of every fit.
    """
    if len(trajectory) < MIN_SNAPSHOTS:
        raise HorizonError(f"decay fits need at least {MIN_SNAPSHOTS} snapshots, got {len(trajectory)}")

    t = trajectory.times
    keep = t >= t[0] + discard_fraction * (t[-1] - t[0])
    l2_u, l2_w = trajectory.series("L2_u"), trajectory.series("L2_omega")
    series = {
        "energy": l2_u ** 2,
        "enstrophy": l2_w ** 2,
        "combined": l2_u ** 2 + l2_w ** 2,
        "L2_u": l2_u,
        "L2_omega": l2_w,
        "Linf_u": trajectory.series("Linf_u"),
        "Linf_grad_u": trajectory.series("Linf_grad_u"),
    }
    for name in trajectory.norms[0]:
        if name.startswith("Ls_u_"):
            series[name] = trajectory.series(name)

    fits = {name: fit_rate(name, t[keep], values[keep]) for name, values in series.items()}
    return DecayDiagnostics(fits, trajectory.system.nu)


def create_example_limit_state(geometry: GeometryBundle, amplitude: float = 1.0) -> LimitState:
    """
    Creates a Taylor-Green limit state over the given geometry.
    """
    data = make_initial_data(geometry.grid, InitialPreset.taylor_green, geometry.nu, amplitude)
    return LimitState(LimitSystem(geometry), data.u)


if __name__ == "__main__":
    from geometry import build_surface, derive_geometry

    grid = PeriodicGrid(32, 32)
    geometry = derive_geometry(build_surface("flat", None, grid), 1e-2, 0.1)
    state = create_example_limit_state(geometry)
    trajectory = simulate(state, 2.0, 0.01, stride=10)
    print(decay_diagnostics(trajectory))
