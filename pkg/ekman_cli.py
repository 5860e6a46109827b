from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import TextIO

import numpy as np

from assembler import ApproxSolution, CutoffProfile, assemble_approx
from console_report import AdmissibilityView, ArtifactsView, ChecksView, TableView, report_error
from errors import ConfigError, EkmanError, FieldIOError, HorizonError, UsageError, VerificationFailure
from field_io import FieldSnapshot, write_csv, write_field_snapshot, write_manifest
from geometry import AdmissibilityMode, AdmissibilityReport, GeometryBundle, build_surface, check_admissibility, derive_geometry
from limit2d import NORM_COLUMNS, LimitState, LimitSystem, Trajectory, decay_diagnostics, make_initial_data, simulate
from plotting import PLOT_KINDS, plot_artifact
from profiles import LayerKernel, Side, StretchedAxis, profile_dump
from scenario_config import ScenarioConfig, read_config, with_overrides
from spectral import PeriodicGrid
from verify import Check, SweepTargets, convergence_sweep, decay_check, required_horizon, residual_rho, sweep_epsilons

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("geometry-check", "simulate", "reconstruct", "residual-sweep", "decay-check", "plot")
EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class Scenario:
    """
    The model of one run: the config and the objects built from it, each built once
    on first use.
    """

    config: ScenarioConfig

    def __init__(self, config: ScenarioConfig) -> None:
        self.config = config
        self._grid = None
        self._geometry = None
        self._trajectory = None
        self._trajectory_end = None

    @property
    def grid(self) -> PeriodicGrid:
        if self._grid is None:
            g = self.config.grid
            self._grid = PeriodicGrid(g.nx, g.ny, g.lx, g.ly)
        return self._grid

    @property
    def geometry(self) -> GeometryBundle:
        if self._geometry is None:
            surface = build_surface(self.config.surface.preset, self.config.surface.params, self.grid)
            self._geometry = derive_geometry(surface, self.config.epsilon, self.config.physics.nu)
        return self._geometry

    @property
    def axis(self) -> StretchedAxis:
        p = self.config.profiles
        return StretchedAxis(p.z_max, p.axis_nodes, p.tail_tolerance)

    @property
    def kernel(self) -> LayerKernel:
        return LayerKernel(self.config.profiles.kernel)

    def admissibility(self) -> AdmissibilityReport:
        s = self.config.surface
        return check_admissibility(self.geometry, AdmissibilityMode(s.admissibility), self.config.physics.sigma,
                                   self.config.epsilon, s.margin)

    def initial_state(self) -> LimitState:
        i = self.config.initial
        data = make_initial_data(self.grid, i.preset, self.config.physics.nu, i.amplitude, i.seed, i.k_cut,
                                 well_prepared=i.well_prepared, epsilon=self.config.epsilon,
                                 sigma=self.config.physics.sigma)
        return LimitState(LimitSystem(self.geometry), data.u)

    def trajectory(self, t_end: float | None = None) -> Trajectory:
        """
        Integrates the limit system from the initial data up to t_end (config T by default).
        """
        t_end = self.config.time.t_end if t_end is None else t_end
        if self._trajectory is None or self._trajectory_end != t_end:
            self._trajectory = simulate(self.initial_state(), t_end, self.config.time.dt, self.config.time.stride)
            self._trajectory_end = t_end
        return self._trajectory

    def assemble(self, state: LimitState) -> ApproxSolution:
        return assemble_approx(state, axis=self.axis, kernel=self.kernel, nzeta=self.config.grid.nzeta,
                               cutoff=CutoffProfile(self.config.profiles.cutoff_order))


class RunResult:
    """
    What a subcommand wrote, and whether its verifications passed.
    """

    paths: list[str]
    checks: list[Check]

    def __init__(self) -> None:
        self.paths = []
        self.checks = []

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


# subcommands

def _path(config: ScenarioConfig, name: str) -> str:
    return os.path.join(config.output.directory, name)


def _norm_rows(trajectory: Trajectory) -> tuple[list[str], list[list[object]]]:
    columns = list(trajectory.norms[0])
    extra = [c for c in columns if c not in NORM_COLUMNS]
    columns = NORM_COLUMNS + extra
    return columns, [[row[c] for c in columns] for row in trajectory.norms]


def run_geometry_check(scenario: Scenario, result: RunResult, stream: TextIO) -> None:
    report = scenario.admissibility()
    columns = ["condition", "worst", "threshold", "margin", "i", "j", "x", "y", "passed"]
    rows = [[c.name, c.worst, c.threshold, c.margin, c.index[0], c.index[1], c.location[0], c.location[1],
             int(c.passed)] for c in report.conditions]
    path = _path(scenario.config, "admissibility.csv")
    write_csv(path, columns, rows)
    result.paths.append(path)
    result.checks.append(Check("admissibility", None, f"{report.mode} conditions", report.verdict))
    AdmissibilityView(report, stream).display()


def run_simulate(scenario: Scenario, result: RunResult, stream: TextIO) -> None:
    config = scenario.config
    trajectory = scenario.trajectory()

    path = _path(config, "norms.csv")
    write_csv(path, *_norm_rows(trajectory))
    result.paths.append(path)

    grid = scenario.grid
    for k, state in enumerate(trajectory.states):
        data = np.stack([state.u[0], state.u[1], state.u3, state.omega])
        snapshot = FieldSnapshot(["u_1", "u_2", "u_3", "omega"], data, grid.lx, grid.ly, config.epsilon,
                                 config.physics.nu, state.t)
        path = _path(config, f"snapshot_{k:04d}.bin")
        write_field_snapshot(path, snapshot)
        result.paths.append(path)

    rows = []
    try:
        diagnostics = decay_diagnostics(trajectory)
        rows = [[name, fit.rate if fit.rate is not None else "skipped", fit.n_points]
                for name, fit in diagnostics.fits.items()]
    except HorizonError as e:
        logger.warning("no decay fits: %s", e)
    path = _path(config, "decay.csv")
    write_csv(path, ["series", "rate", "points"], rows)
    result.paths.append(path)
    TableView("Decay rates", ["series", "rate", "points"], rows, stream=stream).display()


def run_reconstruct(scenario: Scenario, result: RunResult, stream: TextIO) -> None:
    config = scenario.config
    state = scenario.trajectory().final
    approx = scenario.assemble(state)
    report = residual_rho(approx)

    grid = scenario.grid
    nz = approx.column.size
    velocity = approx.velocity.value
    zeta = np.broadcast_to(approx.column.nodes, (grid.nx, grid.ny, nz))
    data = np.stack([velocity[0], velocity[1], velocity[2], approx.pressure.value, zeta])
    snapshot = FieldSnapshot(["U_1", "U_2", "U_3", "P", "zeta"], data, grid.lx, grid.ly, config.epsilon,
                             config.physics.nu, state.t)
    path = _path(config, "approx_field.bin")
    write_field_snapshot(path, snapshot)
    result.paths.append(path)

    # the profiles are dumped where the surface is steepest
    slope = np.hypot(scenario.geometry.Bx, scenario.geometry.By)
    point = tuple(int(k) for k in np.unravel_index(int(np.argmax(slope)), slope.shape))
    for side in Side:
        path = _path(config, f"profile_{side}.csv")
        write_csv(path, *profile_dump(approx.profiles[side], point))
        result.paths.append(path)

    columns, rows = approx.summary_rows()
    rows += report.rows()[1]
    path = _path(config, "assembly.csv")
    write_csv(path, columns, rows)
    result.paths.append(path)

    floor = config.verify.construction_floor
    divergence, boundary = approx.divergence_residual(), approx.boundary_residual()
    result.checks += [Check("divergence_residual", divergence, f"< {floor}", divergence < floor),
                      Check("boundary_residual", boundary, f"< {floor}", boundary < floor)]
    TableView("Assembly", columns, rows, description=str(approx), stream=stream).display()


def run_residual_sweep(scenario: Scenario, result: RunResult, stream: TextIO) -> None:
    config = scenario.config
    try:
        epsilons = sweep_epsilons(list(config.physics.epsilon))
    except ValueError as e:
        raise ConfigError([f"physics.epsilon: {e}"])

    v = config.verify
    targets = SweepTargets(v.distance_slope, v.distance_tolerance, v.rho_slope_min, v.construction_floor,
                           v.refinement_tolerance)
    state = scenario.trajectory().final
    path = _path(config, "sweep.csv")
    try:
        table = convergence_sweep(state, epsilons, scenario.axis, scenario.kernel, config.grid.nzeta,
                                  config.profiles.cutoff_order, targets, refine=v.refine)
    except EkmanError as e:
        partial = getattr(e, "partial_table", None)
        if partial is not None:
            write_csv(path, *partial.csv_rows())
            result.paths.append(path)
            write_manifest(config.output.directory, config.config_hash(), result.paths)
        raise

    write_csv(path, *table.csv_rows())
    result.paths.append(path)
    slopes = _path(config, "sweep_slopes.csv")
    write_csv(slopes, *table.slope_rows())
    result.paths.append(slopes)
    result.checks += table.checks
    TableView("Residual sweep", *table.csv_rows(), stream=stream).display()
    ChecksView("Sweep checks", table.checks, stream).display()


def run_decay_check(scenario: Scenario, result: RunResult, stream: TextIO) -> None:
    config = scenario.config
    horizon = required_horizon(config.physics.nu)
    t_end = config.time.t_end
    if t_end < horizon:
        logger.info("decay check extends the horizon from %.4g to %.4g", t_end, horizon)
        t_end = horizon
    trajectory = scenario.trajectory(t_end)
    v = config.verify
    report = decay_check(trajectory, v.discard_fraction, v.gradient_factor, v.flat_tolerance)

    path = _path(config, "norms.csv")
    write_csv(path, *_norm_rows(trajectory))
    result.paths.append(path)
    path = _path(config, "decay.csv")
    write_csv(path, *report.rows())
    result.paths.append(path)
    result.checks += report.checks
    ChecksView("Decay check", report.checks, stream).display()


def run_plot(scenario: Scenario, result: RunResult, artifact: str | None, kind: str | None) -> str:
    if not artifact:
        raise UsageError("plot needs --artifact PATH")
    path = plot_artifact(artifact, kind, scenario.config.physics.nu, scenario.config.config_hash())
    result.paths.append(path)
    return os.path.dirname(path) or "."


def run(subcommand: str, config: ScenarioConfig, artifact: str | None = None, kind: str | None = None,
        stream: TextIO | None = None) -> RunResult:
    """
    Runs a subcommand, writes its artifacts and the manifest, and raises
    VerificationFailure in strict mode when a check failed.
    """
    if subcommand not in SUBCOMMANDS:
        raise UsageError(f"unknown subcommand '{subcommand}' (known: {', '.join(SUBCOMMANDS)})")
    stream = stream or sys.stdout
    scenario = Scenario(config)
    result = RunResult()
    directory = config.output.directory

    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise FieldIOError(f"cannot create output directory {directory}: {e}")

    if subcommand == "plot":
        directory = run_plot(scenario, result, artifact, kind)
    else:
        handler = {
            "geometry-check": run_geometry_check,
            "simulate": run_simulate,
            "reconstruct": run_reconstruct,
            "residual-sweep": run_residual_sweep,
            "decay-check": run_decay_check,
        }[subcommand]
        handler(scenario, result, stream)

    result.paths.append(write_manifest(directory, config.config_hash(), result.paths))
    ArtifactsView(result.paths, stream).display()

    failed = [check.name for check in result.checks if not check.passed]
    if failed and config.verify.strict:
        raise VerificationFailure(f"{subcommand} failed check(s): {', '.join(failed)}")
    return result


class CliParser(argparse.ArgumentParser):
    """
    An argument parser that raises UsageError instead of exiting.
    """

    def error(self, message: str) -> None:
        raise UsageError(message)


def build_parser() -> CliParser:
    parser = CliParser(prog="ekman_cli", description="Ekman boundary layers over curved terrain")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="YAML scenario file")
    parser.add_argument("--surface", help="surface preset name or sampled surface file")
    parser.add_argument("--epsilon", help="a number or a comma separated list")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--output", help="output directory")
    parser.add_argument("--strict", action="store_true", help="exit 1 when a verification fails")
    parser.add_argument("--t-end", type=float, dest="t_end")
    parser.add_argument("--nzeta", type=int)
    parser.add_argument("--artifact", help="artifact to plot")
    parser.add_argument("--kind", choices=PLOT_KINDS, help="plot kind, guessed from the artifact by default")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    return parser


def exit_code(error: EkmanError) -> int:
    if error.error_class in ("numerical", "verification"):
        return EXIT_FAILED
    return EXIT_USAGE


def main(argv: list[str] | None = None) -> int:
    """
    Parses the command line, runs the subcommand and returns the exit code:
    0 ok, 1 failed verification or numerical error, 2 usage, io, config or surface error.
    """
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        report_error(e.error_class, e.message)
        return EXIT_USAGE

    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")

    try:
        config = with_overrides(read_config(args.config), args.surface, args.epsilon, args.seed, args.output,
                                args.strict, args.t_end, args.nzeta)
        run(args.subcommand, config, args.artifact, args.kind)
        return EXIT_OK
    except EkmanError as e:
        report_error(e.error_class, e.message)
        return exit_code(e)
    except ValueError as e:
        report_error("usage", str(e))
        return EXIT_USAGE


if __name__ == "__main__":
    # exit with the return value of main()
    sys.exit(main())
