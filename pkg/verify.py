from __future__ import annotations

import logging

import numpy as np

from assembler import (ApproxSolution, CutoffProfile, TerrainField, advect, assemble_approx, terrain_gradient,
                       terrain_laplacian)
from errors import EkmanError, HorizonError, ResidualBlowupError
from geometry import GeometryBundle
from limit2d import DecayDiagnostics, LimitState, Trajectory, decay_diagnostics, fit_rate, matvec, speed
from profiles import LayerKernel, StretchedAxis

logger = logging.getLogger(__name__)

BLOWUP_RATIO = 0.25            # residual / largest singular term above which the cancellation has failed
CONSISTENCY_TOLERANCE = 1e-10
RESIDUAL_GROUPS = ("interior", "vertical_limit", "layer_transport", "advection_cross", "corrector")
SWEEP_COLUMNS = ["epsilon", "distance", "rho", "rho_transverse", "vertical_limit", "corrector",
                 "divergence", "boundary"]
HORIZON_EFOLDINGS = 3.0


class Check:
    """
    One pass/fail verification against a target.
    """

    name: str
    value: float | None
    target: str
    passed: bool

    def __init__(self, name: str, value: float | None, target: str, passed: bool) -> None:
        self.name = name
        self.value = value
        self.target = target
        self.passed = bool(passed)

    def __str__(self) -> str:
        value = "n/a" if self.value is None else f"{self.value:.6g}"
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} = {value} (target {self.target})"


# residual of the approximate solution

def _coriolis(values: np.ndarray) -> np.ndarray:
    return np.stack([-values[1], values[0], np.zeros_like(values[0])])


def _linear_part(field: TerrainField, rate: TerrainField, geometry: GeometryBundle) -> np.ndarray:
    """
    Returns d/dt f - nu eps lap f + eps^-1 R f.
    """
    eps = geometry.epsilon
    return rate.value - geometry.nu * eps * terrain_laplacian(field, geometry) + _coriolis(field.value) / eps


class ResidualReport:
    """
    Norms of the residual of U_app in the rotating channel equations, with its
    breakdown by term group. groups hold the L2 norm of each group field; the group
    fields add up to the total field up to consistency.
    """

    epsilon: float
    time: float
    norm_h: float
    norm_3: float
    total: float
    transverse: float
    groups: dict[str, float]
    singular: dict[str, float]
    consistency: float

    def __init__(self, epsilon: float, time: float, norm_h: float, norm_3: float, transverse: float,
                 groups: dict[str, float], singular: dict[str, float], consistency: float) -> None:
        self.epsilon = epsilon
        self.time = time
        self.norm_h = norm_h
        self.norm_3 = norm_3
        self.total = float(np.hypot(norm_h, norm_3))
        self.transverse = transverse
        self.groups = groups
        self.singular = singular
        self.consistency = consistency

    @property
    def singular_ratio(self) -> float:
        largest = max(self.singular.values())
        return self.total / largest if largest > 0.0 else 0.0

    def rows(self) -> tuple[list[str], list[list[object]]]:
        rows = [["rho_h", self.norm_h], ["rho_3", self.norm_3], ["rho", self.total],
                ["rho_transverse", self.transverse]]
        rows += [[f"group_{name}", value] for name, value in self.groups.items()]
        rows += [[f"singular_{name}", value] for name, value in self.singular.items()]
        rows += [["consistency", self.consistency], ["epsilon", self.epsilon], ["time", self.time]]
        return ["quantity", "value"], rows

    def __str__(self) -> str:
        groups = ", ".join(f"{name} {value:.3e}" for name, value in self.groups.items())
        return f"ResidualReport (eps={self.epsilon:g}, ||rho||={self.total:.4e}; {groups})"


def residual_rho(approx: ApproxSolution) -> ResidualReport:
    """
    Evaluates rho = dU/dt - nu eps lap U + (U . grad) U + eps^-1 R U + eps^-1 grad P for
    U = U_app, P = P_app on the terrain-following grid. Time derivatives come from
    the limit tendency. Raises ResidualBlowupError when the total is of the size of
    the eps^-1 terms that should cancel.
    """
    if approx.rate_components is None:
        raise ValueError("the residual needs an approximate solution assembled with its time derivative")
    geometry = approx.geometry
    eps = geometry.epsilon
    parts, rates = approx.components, approx.rate_components
    velocity, rate = approx.velocity, approx.rate

    gradient_mean = np.zeros((3, 1, 1, 1))
    gradient_mean[:2, 0, 0, 0] = approx.pressure_gradient_mean
    interior_pressure = terrain_gradient(approx.pressure_parts["interior"], geometry) / eps
    layer_pressure = terrain_gradient(approx.pressure_parts["layer"], geometry) / eps

    mean = parts["mean"]
    mean_advection = advect(mean, mean, geometry)
    vertical_limit = np.zeros_like(mean.value)
    vertical_limit[2] = rates["mean"].value[2] + mean_advection[2]

    fields = {
        "interior": (_linear_part(mean, rates["mean"], geometry) + _linear_part(parts["interior1"], rates["interior1"], geometry)
                     + interior_pressure + gradient_mean / eps + mean_advection - vertical_limit),
        "vertical_limit": vertical_limit,
        "layer_transport": _linear_part(parts["layer"], rates["layer"], geometry) + layer_pressure,
        "advection_cross": advect(velocity, velocity, geometry) - mean_advection,
        "corrector": _linear_part(parts["corrector"], rates["corrector"], geometry),
    }
    viscous = geometry.nu * eps * terrain_laplacian(velocity, geometry)
    coriolis = _coriolis(velocity.value) / eps
    pressure = interior_pressure + layer_pressure + gradient_mean / eps
    total = rate.value - viscous + advect(velocity, velocity, geometry) + coriolis + pressure

    summed = sum(fields.values())
    scale = max(approx.l2(total), approx.l2(summed), 1e-300)
    consistency = approx.l2(total - summed) / scale
    if consistency > CONSISTENCY_TOLERANCE:
        logger.warning("residual groups add up to the total only to %.3e", consistency)

    report = ResidualReport(
        eps, approx.time, approx.l2(total[:2]), approx.l2(total[2]), approx.l2(total - vertical_limit),
        {name: approx.l2(field) for name, field in fields.items()},
        {"coriolis": approx.l2(coriolis), "pressure": approx.l2(pressure), "viscous": approx.l2(viscous)},
        consistency,
    )
    if report.singular_ratio > BLOWUP_RATIO:
        largest = max(report.singular, key=report.singular.get)
        raise ResidualBlowupError(largest, report.singular_ratio)
    logger.info("%s", report)
    return report


def vertical_term_norms(state: LimitState, geometry: GeometryBundle | None = None) -> dict[str, float]:
    """
    Returns the L2 norms of the three pieces of d/dt u3 + (u . grad) u3 with u3 = grad B . u:
    grad B . u_t (from the projected tendency), u^T H u and grad B . (u . grad) u, and
    the bound sup|grad B| (||u||_Linf + 2 sqrt(nu)) ||omega|| on the first.
    """
    geometry = geometry or state.geometry
    grid = state.grid
    u = state.u
    slope = geometry.grad_B
    u_t = state.tendency()
    advection = np.array([grid.advect(u[0], u[1], u[0]), grid.advect(u[0], u[1], u[1])])
    sup_slope = float(np.sqrt(geometry.Bx ** 2 + geometry.By ** 2).max())
    return {
        "dt_u3": grid.l2_norm(np.sum(slope * u_t, axis=0)),
        "hessian": grid.l2_norm(np.sum(u * matvec(geometry.H, u), axis=0)),
        "slope_advection": grid.l2_norm(np.sum(slope * advection, axis=0)),
        "bound": sup_slope * (float(speed(u).max()) + 2.0 * np.sqrt(geometry.nu)) * grid.l2_norm(state.omega),
    }


# epsilon sweeps

class SweepTargets:
    """
    Pass criteria of a convergence sweep.
    """

    distance_slope: float = 0.5
    distance_tolerance: float = 0.1
    rho_slope_min: float = 0.4
    construction_floor: float = 1e-6
    refinement_tolerance: float = 0.02

    def __init__(self, distance_slope: float = 0.5, distance_tolerance: float = 0.1, rho_slope_min: float = 0.4,
                 construction_floor: float = 1e-6, refinement_tolerance: float = 0.02) -> None:
        self.distance_slope = distance_slope
        self.distance_tolerance = distance_tolerance
        self.rho_slope_min = rho_slope_min
        self.construction_floor = construction_floor
        self.refinement_tolerance = refinement_tolerance


class SlopeFit:
    """
    An unweighted least-squares line through (log eps, log value) with the standard error of the slope.
    """

    name: str
    slope: float
    intercept: float
    stderr: float

    def __init__(self, name: str, slope: float, intercept: float, stderr: float) -> None:
        self.name = name
        self.slope = slope
        self.intercept = intercept
        self.stderr = stderr

    def __str__(self) -> str:
        return f"{self.name}: slope {self.slope:.4f} +- {self.stderr:.2e}"


def fit_slope(name: str, epsilons: np.ndarray, values: np.ndarray) -> SlopeFit:
    try:
        assert epsilons.size >= 3 and np.all(values > 0.0)
    except AssertionError:
        raise ValueError(f"slope of {name} needs >= 3 positive values, got {values}")
    x, y = np.log(epsilons), np.log(values)
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    spread = np.sum((x - x.mean()) ** 2)
    stderr = float(np.sqrt(np.sum(residual ** 2) / (x.size - 2) / spread)) if x.size > 2 else float("nan")
    return SlopeFit(name, float(slope), float(intercept), stderr)


class SweepTable:
    """
    One row per epsilon, in strictly decreasing epsilon order, with the fitted log-log slopes.
    """

    rows: list[dict[str, float]]
    slopes: dict[str, SlopeFit]
    checks: list[Check]
    refined_slopes: dict[str, SlopeFit] | None

    def __init__(self) -> None:
        self.rows = []
        self.slopes = {}
        self.checks = []
        self.refined_slopes = None

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def csv_rows(self) -> tuple[list[str], list[list[object]]]:
        return SWEEP_COLUMNS, [[row[name] for name in SWEEP_COLUMNS] for row in self.rows]

    def slope_rows(self) -> tuple[list[str], list[list[object]]]:
        rows = [[fit.name, fit.slope, fit.stderr, "base"] for fit in self.slopes.values()]
        if self.refined_slopes:
            rows += [[fit.name, fit.slope, fit.stderr, "refined"] for fit in self.refined_slopes.values()]
        return ["quantity", "slope", "stderr", "grid"], rows

    def __str__(self) -> str:
        lines = [f"SweepTable ({len(self)} rows)"]
        lines += [str(fit) for fit in self.slopes.values()]
        lines += [str(check) for check in self.checks]
        return "\n".join(lines)


def sweep_epsilons(epsilons: list[float]) -> list[float]:
    """
    Returns the epsilons in strictly decreasing order after checking there are at
    least three, all distinct and positive, spanning a decade.
    """
    ordered = sorted((float(e) for e in epsilons), reverse=True)
    try:
        assert len(ordered) >= 3
        assert all(e > 0.0 for e in ordered)
        assert all(a > b for a, b in zip(ordered, ordered[1:]))
        assert ordered[0] / ordered[-1] >= 10.0 * (1.0 - 1e-12)
    except AssertionError:
        raise ValueError(f"a sweep needs >= 3 distinct positive epsilons spanning a decade, got {epsilons}")
    return ordered


def sweep_row(state: LimitState, epsilon: float, axis: StretchedAxis, kernel: LayerKernel,
              nzeta: int, cutoff_order: int) -> dict[str, float]:
    """
    Assembles U_app at one epsilon and returns its sweep row.
    """
    approx = assemble_approx(state, epsilon=epsilon, axis=axis, kernel=kernel, nzeta=nzeta,
                             cutoff=CutoffProfile(cutoff_order))
    report = residual_rho(approx)
    limit_norm = max(state.grid.l2_norm(*state.u), 1e-300)
    row = {
        "epsilon": epsilon,
        "distance": approx.distance_to_limit(),
        "rho": report.total,
        "rho_transverse": report.transverse,
        "vertical_limit": report.groups["vertical_limit"],
        "corrector": approx.l2(approx.components["corrector"].value) / limit_norm,
        "divergence": approx.divergence_residual(),
        "boundary": approx.boundary_residual(),
    }
    logger.info("sweep row: %s", ", ".join(f"{k}={v:.4e}" for k, v in row.items()))
    return row


def _fit_table(table: SweepTable, names: tuple[str, ...]) -> dict[str, SlopeFit]:
    eps = table.column("epsilon")
    fits = {}
    for name in names:
        values = table.column(name)
        if np.all(values > 0.0):
            fits[name] = fit_slope(name, eps, values)
    return fits


def convergence_sweep(state: LimitState, epsilons: list[float], axis: StretchedAxis | None = None,
                      kernel: LayerKernel = LayerKernel.green, nzeta: int = 64, cutoff_order: int = 3,
                      targets: SweepTargets | None = None, refine: bool = False) -> SweepTable:
    """
    Assembles U_app at each epsilon from the same limit state and grids, fits log-log
    slopes and checks them against targets. A failing row aborts the sweep; the rows
    done so far travel with the raised error as partial_table.
    """
    epsilons = sweep_epsilons(epsilons)
    axis = axis or StretchedAxis()
    targets = targets or SweepTargets()
    table = SweepTable()

    for eps in epsilons:
        try:
            table.rows.append(sweep_row(state, eps, axis, kernel, nzeta, cutoff_order))
        except EkmanError as e:
            logger.info("sweep aborted at eps=%g after %d rows", eps, len(table))
            e.partial_table = table
            raise

    fitted = ("distance", "rho_transverse", "corrector")
    table.slopes = _fit_table(table, fitted)
    rho = table.column("rho_transverse")
    distance = table.slopes.get("distance")
    transverse = table.slopes.get("rho_transverse")
    table.checks = [
        Check("distance_slope", distance.slope if distance else None,
              f"{targets.distance_slope} +- {targets.distance_tolerance}",
              distance is not None and abs(distance.slope - targets.distance_slope) <= targets.distance_tolerance),
        Check("rho_slope", transverse.slope if transverse else None, f">= {targets.rho_slope_min}",
              transverse is not None and transverse.slope >= targets.rho_slope_min),
        Check("rho_decreasing", float(np.max(np.diff(rho))), "< 0", bool(np.all(np.diff(rho) < 0.0))),
        Check("divergence_floor", float(table.column("divergence").max()), f"< {targets.construction_floor}",
              table.column("divergence").max() < targets.construction_floor),
        Check("boundary_floor", float(table.column("boundary").max()), f"< {targets.construction_floor}",
              table.column("boundary").max() < targets.construction_floor),
    ]

    if refine:
        refined = SweepTable()
        refined.rows = [sweep_row(state, eps, axis, kernel, 2 * nzeta, cutoff_order) for eps in epsilons]
        table.refined_slopes = _fit_table(refined, fitted)
        for name, fit in table.slopes.items():
            change = abs(table.refined_slopes[name].slope - fit.slope) if name in table.refined_slopes else None
            table.checks.append(Check(f"{name}_refinement", change, f"<= {targets.refinement_tolerance}",
                                      change is not None and change <= targets.refinement_tolerance))

    for check in table.checks:
        logger.info("%s", check)
    return table


# decay of the limit flow

class DecayReport:
    """
    Fitted decay rates of a trajectory with the checks against the guaranteed bounds.
    """

    diagnostics: DecayDiagnostics
    vertical_rates: dict[str, float | None]
    checks: list[Check]
    horizon: float
    flat: bool

    def __init__(self, diagnostics: DecayDiagnostics, vertical_rates: dict[str, float | None], checks: list[Check],
                 horizon: float, flat: bool) -> None:
        self.diagnostics = diagnostics
        self.vertical_rates = vertical_rates
        self.checks = checks
        self.horizon = horizon
        self.flat = flat

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def rows(self) -> tuple[list[str], list[list[object]]]:
        """
        Returns the decay CSV: one row per fitted series with its reference bound.
        """
        d = self.diagnostics
        bounds = {"energy": d.conservative_bound, "combined": d.conservative_bound, "Linf_u": d.conservative_bound,
                  "Linf_grad_u": d.gradient_bound}
        rows = [[name, fit.rate if fit.rate is not None else "skipped", bounds.get(name, ""), fit.n_points]
                for name, fit in d.fits.items()]
        rows += [[f"vertical_{name}", rate if rate is not None else "skipped", d.conservative_bound, ""]
                 for name, rate in self.vertical_rates.items()]
        return ["series", "rate", "bound", "points"], rows

    def __str__(self) -> str:
        return "\n".join([f"DecayReport (horizon {self.horizon:.4g})"] + [str(c) for c in self.checks])


def required_horizon(nu: float) -> float:
    """
    Returns three e-folding times of ||u|| at the flat surface rate sqrt(nu / 2).
    """
    return HORIZON_EFOLDINGS / np.sqrt(nu / 2.0)


def decay_check(trajectory: Trajectory, discard_fraction: float = 1.0 / 3.0, gradient_factor: float = 0.9,
                flat_tolerance: float = 0.01) -> DecayReport:
    """
    Fits decay rates of a limit trajectory and checks the energy, combined and Linf
    rates against sqrt(2 nu) / 8, the gradient Linf rate after the discarded transient
    against gradient_factor sqrt(nu / 2), and over a flat surface the energy rate
    against the exact sqrt(2 nu).
    """
    system = trajectory.system
    nu = system.nu
    times = trajectory.times
    horizon = float(times[-1] - times[0]) if len(trajectory) else 0.0
    if horizon < required_horizon(nu) * (1.0 - 1e-9):
        raise HorizonError(f"decay check needs a horizon of {required_horizon(nu):.4g}, trajectory spans {horizon:.4g}")

    whole = decay_diagnostics(trajectory)
    late = decay_diagnostics(trajectory, discard_fraction)
    bound = whole.conservative_bound
    checks = []
    for name in ("energy", "combined", "Linf_u"):
        rate = whole.rate(name)
        checks.append(Check(f"{name}_rate", rate, f">= {bound:.6g}", rate is not None and rate >= bound))
    gradient = late.rate("Linf_grad_u")
    target = gradient_factor * whole.gradient_bound
    checks.append(Check("Linf_grad_u_rate", gradient, f">= {target:.6g}", gradient is not None and gradient >= target))

    flat = system.geometry.is_flat()
    if flat:
        rate = whole.rate("energy")
        exact = whole.exact_flat_rate
        checks.append(Check("flat_energy_rate", rate, f"{exact:.6g} +- {flat_tolerance:.0%}",
                            rate is not None and abs(rate - exact) <= flat_tolerance * exact))

    series = [vertical_term_norms(state) for state in trajectory.states]
    vertical_rates = {}
    for name in ("dt_u3", "hessian", "slope_advection"):
        fit = fit_rate(name, times, np.array([row[name] for row in series]))
        vertical_rates[name] = fit.rate
        if fit.rate is not None:
            checks.append(Check(f"vertical_{name}_rate", fit.rate, f">= {bound:.6g}", fit.rate >= bound))

    report = DecayReport(whole, vertical_rates, checks, horizon, flat)
    for check in checks:
        logger.info("%s", check)
    return report


if __name__ == "__main__":
    from geometry import build_surface, derive_geometry
    from limit2d import create_example_limit_state
    from spectral import PeriodicGrid

    grid = PeriodicGrid(16, 16)
    geometry = derive_geometry(build_surface("eggcarton", {"amp": 0.05}, grid), 1e-2, 0.1)
    state = create_example_limit_state(geometry)
    print(residual_rho(assemble_approx(state)))
    print(vertical_term_norms(state))
