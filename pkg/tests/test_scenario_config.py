import pytest

from errors import ConfigError, FieldIOError
from scenario_config import (ScenarioConfig, create_example_config, parse_config, parse_epsilons, read_config,
                             with_overrides)


def test_empty_document_gives_defaults() -> None:
    config = parse_config("")
    assert config == ScenarioConfig()
    assert config.grid.nx == 32 and config.physics.nu == 0.1
    assert config.epsilon == 1e-2
    assert not config.sweep_mode
    assert read_config(None) == config


def test_example_scenario_is_a_sweep() -> None:
    """
    A comma separated epsilon list switches sweep mode on, ordered largest first.
    """
    config = parse_config(create_example_config())
    assert config.surface.preset == "eggcarton"
    assert config.surface.params == {"amp": 0.05, "kx": 1.0, "ky": 1.0}
    assert config.physics.epsilon == (1e-2, 3e-3, 1e-3)
    assert config.sweep_mode
    assert config.epsilon == 1e-2


def test_errors_carry_line_numbers() -> None:
    text = "grid:\n  nx: 100\n  ny: 32\n"
    with pytest.raises(ConfigError) as raised:
        parse_config(text)
    assert raised.value.errors == ["line 2: grid.nx = 100 must be a power of two >= 8"]
    assert raised.value.error_class == "config"


def test_every_problem_is_reported() -> None:
    """
    Unknown sections and keys and bad values are collected into one error.
    """
    text = "\n".join([
        "grid:",
        "  nx: 100",
        "  depth: 3",
        "physics:",
        "  nu: -1",
        "  epsilon: 2.0",
        "weather:",
        "  rain: true",
    ])
    with pytest.raises(ConfigError) as raised:
        parse_config(text)
    errors = raised.value.errors
    assert len(errors) == 5
    assert errors[0].startswith("line 2: grid.nx")
    assert "unknown key 'grid.depth'" in errors[1]
    assert errors[2].startswith("line 5: physics.nu")
    assert errors[3].startswith("line 6: physics.epsilon")
    assert "unknown section 'weather'" in errors[4]


def test_values_of_the_wrong_type() -> None:
    with pytest.raises(ConfigError) as raised:
        parse_config("time:\n  stride: 2.5\n  t_end: soon\nverify:\n  strict: 1\n")
    assert len(raised.value.errors) == 3
    with pytest.raises(ConfigError):
        parse_config("- a list\n- not a mapping\n")
    with pytest.raises(ConfigError):
        parse_config("grid: [unclosed\n")


def test_parse_epsilons() -> None:
    assert parse_epsilons(0.01) == (0.01,)
    assert parse_epsilons("1e-3, 1e-2") == (1e-2, 1e-3)
    for bad in ("", "abc", "0.5,0.5", "1.5", True):
        with pytest.raises(ValueError):
            parse_epsilons(bad)


def test_command_line_overrides() -> None:
    """
    Command line values replace file values; a new surface drops the old parameters.
    """
    config = parse_config(create_example_config())
    changed = with_overrides(config, surface="bump", epsilon="0.02", seed=7, output="elsewhere", strict=True,
                             t_end=1.5, nzeta=32)
    assert changed.surface.preset == "bump" and changed.surface.params == {}
    assert changed.physics.epsilon == (0.02,)
    assert changed.initial.seed == 7
    assert changed.output.directory == "elsewhere"
    assert changed.verify.strict
    assert changed.time.t_end == 1.5 and changed.grid.nzeta == 32
    assert changed.config_hash() != config.config_hash()
    assert with_overrides(config).config_hash() == config.config_hash()

    with pytest.raises(ConfigError) as raised:
        with_overrides(config, epsilon="2", seed=-1, nzeta=4)
    assert len(raised.value.errors) == 3


def test_missing_config_file(tmp_path) -> None:
    with pytest.raises(FieldIOError):
        read_config(str(tmp_path / "absent.yaml"))
    path = tmp_path / "scenario.yaml"
    path.write_text("surface:\n  preset: eggcarton\n", encoding="utf8")
    assert read_config(str(path)).surface.preset == "eggcarton"
