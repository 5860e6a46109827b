from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import yaml

from errors import ConfigError, FieldIOError
from geometry import AdmissibilityMode, SurfacePreset
from limit2d import InitialPreset
from profiles import LayerKernel
from spectral import is_power_of_two

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SurfaceConfig:
    preset: str = "flat"
    params: dict[str, float] = field(default_factory=lambda: {"c": 0.0})
    admissibility: str = str(AdmissibilityMode.curved)
    margin: float = 0.0


@dataclass(frozen=True)
class GridConfig:
    nx: int = 32
    ny: int = 32
    nzeta: int = 64
    lx: float = 6.283185307179586
    ly: float = 6.283185307179586


@dataclass(frozen=True)
class PhysicsConfig:
    nu: float = 0.1
    epsilon: tuple[float, ...] = (1e-2,)
    sigma: float = 0.5


@dataclass(frozen=True)
class InitialConfig:
    preset: str = str(InitialPreset.taylor_green)
    amplitude: float = 1.0
    seed: int = 0
    k_cut: int = 4
    well_prepared: bool = False


@dataclass(frozen=True)
class TimeConfig:
    t_end: float = 5.0
    dt: float = 0.01
    stride: int = 10


@dataclass(frozen=True)
class ProfilesConfig:
    z_max: float = 28.0
    axis_nodes: int = 256
    tail_tolerance: float = 1e-8
    kernel: str = str(LayerKernel.green)
    cutoff_order: int = 3


@dataclass(frozen=True)
class VerifyConfig:
    distance_slope: float = 0.5
    distance_tolerance: float = 0.1
    rho_slope_min: float = 0.4
    construction_floor: float = 1e-6
    refinement_tolerance: float = 0.02
    gradient_factor: float = 0.9
    flat_tolerance: float = 0.01
    discard_fraction: float = 1.0 / 3.0
    refine: bool = False
    strict: bool = False


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"


@dataclass(frozen=True)
class ScenarioConfig:
    """
    A validated scenario. Two or more epsilons switch sweep mode on.
    """

    surface: SurfaceConfig = field(default_factory=SurfaceConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    profiles: ProfilesConfig = field(default_factory=ProfilesConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def sweep_mode(self) -> bool:
        return len(self.physics.epsilon) >= 2

    @property
    def epsilon(self) -> float:
        """
        Returns the largest epsilon, the one single runs use.
        """
        return self.physics.epsilon[0]

    def config_hash(self) -> str:
        """
        Returns the sha256 of the canonical JSON form of the config.
        """
        canonical = json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf8")).hexdigest()


SECTIONS: dict[str, type] = {
    "surface": SurfaceConfig,
    "grid": GridConfig,
    "physics": PhysicsConfig,
    "initial": InitialConfig,
    "time": TimeConfig,
    "profiles": ProfilesConfig,
    "verify": VerifyConfig,
    "output": OutputConfig,
}


# value checks: each returns an error message or None

def _positive(v: float) -> str | None:
    return None if v > 0 else "must be > 0"


def _non_negative(v: float) -> str | None:
    return None if v >= 0 else "must be >= 0"


def _at_least(n: int) -> Callable[[float], str | None]:
    return lambda v: None if v >= n else f"must be >= {n}"


def _open_unit(v: float) -> str | None:
    return None if 0 < v < 1 else "must lie in (0, 1)"


def _fraction(v: float) -> str | None:
    return None if 0 <= v < 1 else "must lie in [0, 1)"


def _power_of_two(v: int) -> str | None:
    return None if v >= 8 and is_power_of_two(v) else "must be a power of two >= 8"


def _one_of(choices: list[str]) -> Callable[[str], str | None]:
    return lambda v: None if v in choices else f"must be one of {', '.join(choices)}"


def _surface_preset(v: str) -> str | None:
    # anything that is not a preset name is taken as a sampled surface file
    return None if v.strip() else "must name a preset or a surface file"


# (type, check) per key
FIELD_RULES: dict[str, dict[str, tuple[str, Callable | None]]] = {
    "surface": {
        "preset": ("str", _surface_preset),
        "params": ("params", None),
        "admissibility": ("str", _one_of([str(m) for m in AdmissibilityMode])),
        "margin": ("float", _non_negative),
    },
    "grid": {
        "nx": ("int", _power_of_two),
        "ny": ("int", _power_of_two),
        "nzeta": ("int", _at_least(16)),
        "lx": ("float", _positive),
        "ly": ("float", _positive),
    },
    "physics": {
        "nu": ("float", _positive),
        "epsilon": ("epsilons", None),
        "sigma": ("float", _positive),
    },
    "initial": {
        "preset": ("str", _one_of([str(p) for p in InitialPreset])),
        "amplitude": ("float", _non_negative),
        "seed": ("int", _non_negative),
        "k_cut": ("int", _at_least(1)),
        "well_prepared": ("bool", None),
    },
    "time": {
        "t_end": ("float", _positive),
        "dt": ("float", _positive),
        "stride": ("int", _at_least(1)),
    },
    "profiles": {
        "z_max": ("float", _positive),
        "axis_nodes": ("int", _at_least(16)),
        "tail_tolerance": ("float", _open_unit),
        "kernel": ("str", _one_of([str(k) for k in LayerKernel])),
        "cutoff_order": ("int", _at_least(2)),
    },
    "verify": {
        "distance_slope": ("float", _positive),
        "distance_tolerance": ("float", _positive),
        "rho_slope_min": ("float", None),
        "construction_floor": ("float", _positive),
        "refinement_tolerance": ("float", _positive),
        "gradient_factor": ("float", _positive),
        "flat_tolerance": ("float", _positive),
        "discard_fraction": ("float", _fraction),
        "refine": ("bool", None),
        "strict": ("bool", None),
    },
    "output": {
        "directory": ("str", None),
    },
}


def parse_epsilons(value: Any) -> tuple[float, ...]:
    """
    Takes a number or a comma separated list and returns the epsilons in strictly
    decreasing order. Raises ValueError naming the problem.
    """
    if isinstance(value, bool):
        raise ValueError("must be a number or a comma separated list of numbers")
    if isinstance(value, (int, float)):
        values = [float(value)]
    else:
        try:
            values = [float(part) for part in str(value).split(",") if part.strip()]
        except ValueError:
            raise ValueError(f"'{value}' is not a number or a comma separated list of numbers")
    try:
        assert values
        assert all(0 < v < 1 for v in values)
    except AssertionError:
        raise ValueError("every epsilon must lie in (0, 1)")
    ordered = sorted(values, reverse=True)
    if len(set(ordered)) != len(ordered):
        raise ValueError("epsilons must be distinct")
    return tuple(ordered)


def _convert(kind: str, value: Any) -> Any:
    """
    Converts a constructed YAML value to the field type or raises ValueError.
    Floats are also accepted as strings, since YAML 1.1 reads 1e-2 as text.
    """
    if kind == "epsilons":
        return parse_epsilons(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ValueError(f"expected true or false, got '{value}'")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"expected an integer, got '{value}'")
        return value
    if kind == "float":
        if isinstance(value, bool):
            raise ValueError(f"expected a number, got '{value}'")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ValueError(f"expected a number, got '{value}'")
    if kind == "params":
        if not isinstance(value, dict):
            raise ValueError("expected a mapping of parameter names to numbers")
        if any(isinstance(v, bool) for v in value.values()):
            raise ValueError("surface parameters must be numbers")
        try:
            return {str(k): float(v) for k, v in value.items()}
        except (TypeError, ValueError):
            raise ValueError("surface parameters must be numbers")
    if not isinstance(value, str):
        raise ValueError(f"expected text, got '{value}'")
    return value


def _construct(node: yaml.Node) -> Any:
    return yaml.constructor.SafeConstructor().construct_object(node, deep=True)


def parse_config(text: str) -> ScenarioConfig:
    """
    Parses a YAML scenario. Every problem found is collected, with its line number,
    and raised together as one ConfigError. Missing keys take their defaults.
    """
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as e:
        raise ConfigError([f"not a valid YAML document: {e}"])

    if root is None:
        return ScenarioConfig()
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError([f"line {root.start_mark.line + 1}: the scenario must be a mapping of sections"])

    errors = []
    sections = {}
    for key_node, section_node in root.value:
        line = key_node.start_mark.line + 1
        name = key_node.value
        if name not in SECTIONS:
            errors.append(f"line {line}: unknown section '{name}' (known: {', '.join(SECTIONS)})")
            continue
        if not isinstance(section_node, yaml.MappingNode):
            errors.append(f"line {line}: section '{name}' must be a mapping")
            continue

        values = {}
        rules = FIELD_RULES[name]
        for field_key, value_node in section_node.value:
            field_line = field_key.start_mark.line + 1
            key = field_key.value
            if key not in rules:
                errors.append(f"line {field_line}: unknown key '{name}.{key}' (known: {', '.join(rules)})")
                continue
            kind, check = rules[key]
            try:
                value = _convert(kind, _construct(value_node))
            except ValueError as e:
                errors.append(f"line {field_line}: {name}.{key}: {e}")
                continue
            problem = check(value) if check else None
            if problem:
                errors.append(f"line {field_line}: {name}.{key} = {value} {problem}")
                continue
            values[key] = value
        sections[name] = SECTIONS[name](**values)

    if errors:
        raise ConfigError(errors)
    config = ScenarioConfig(**sections)
    logger.debug("parsed config %s", config)
    return config


def read_config(path: str | None) -> ScenarioConfig:
    """
    Reads and parses a scenario file. No path gives the defaults.
    """
    if path is None:
        return ScenarioConfig()
    try:
        with open(path, encoding="utf8") as f:
            text = f.read()
    except OSError as e:
        raise FieldIOError(f"cannot read config {path}: {e}")
    return parse_config(text)


def with_overrides(config: ScenarioConfig, surface: str | None = None, epsilon: str | None = None,
                   seed: int | None = None, output: str | None = None, strict: bool | None = None,
                   t_end: float | None = None, nzeta: int | None = None) -> ScenarioConfig:
    """
    Returns the config with command line values replacing the file values.
    """
    errors = []
    replace = dataclasses.replace

    if surface is not None:
        # a new preset starts from its own default parameters
        params = {} if surface != config.surface.preset else config.surface.params
        config = replace(config, surface=replace(config.surface, preset=surface, params=params))
    if epsilon is not None:
        try:
            config = replace(config, physics=replace(config.physics, epsilon=parse_epsilons(epsilon)))
        except ValueError as e:
            errors.append(f"--epsilon: {e}")
    if seed is not None:
        if seed < 0:
            errors.append(f"--seed = {seed} must be >= 0")
        else:
            config = replace(config, initial=replace(config.initial, seed=seed))
    if output is not None:
        config = replace(config, output=replace(config.output, directory=output))
    if strict:
        config = replace(config, verify=replace(config.verify, strict=True))
    if t_end is not None:
        if t_end <= 0:
            errors.append(f"--t-end = {t_end} must be > 0")
        else:
            config = replace(config, time=replace(config.time, t_end=t_end))
    if nzeta is not None:
        if nzeta < 16:
            errors.append(f"--nzeta = {nzeta} must be >= 16")
        else:
            config = replace(config, grid=replace(config.grid, nzeta=nzeta))

    if errors:
        raise ConfigError(errors)
    return config


def create_example_config() -> str:
    """
    Returns a documented scenario over an eggcarton surface.
    """
    return "\n".join([
        "surface:",
        f"  preset: {SurfacePreset.eggcarton}",
        "  params: {amp: 0.05, kx: 1, ky: 1}",
        "grid:",
        "  nx: 32",
        "  ny: 32",
        "  nzeta: 64",
        "physics:",
        "  nu: 0.1",
        "  epsilon: 1e-2,3e-3,1e-3",
        "time:",
        "  t_end: 5.0",
        "  dt: 0.01",
        "",
    ])


if __name__ == "__main__":
    print(parse_config(create_example_config()))
