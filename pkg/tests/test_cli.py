import io
import json
import os
from dataclasses import replace

import pytest

from console_report import ChecksView, TableView, report_error
from ekman_cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, build_parser, exit_code, main, run
from errors import CflViolationError, ConfigError, SurfaceError, UsageError, VerificationFailure
from field_io import read_csv
from scenario_config import parse_config
from verify import Check

SMALL = "\n".join([
    "grid:",
    "  nx: 16",
    "  ny: 16",
    "  nzeta: 32",
    "time:",
    "  t_end: 0.2",
    "  dt: 0.02",
    "  stride: 5",
    "profiles:",
    "  axis_nodes: 128",
    "",
])


def _config_file(tmp_path, text: str = SMALL) -> str:
    path = tmp_path / "scenario.yaml"
    path.write_text(text, encoding="utf8")
    return str(path)


def test_geometry_check_writes_its_artifacts(tmp_path, capsys) -> None:
    """
    A flat geometry check passes and leaves the CSV and the manifest behind.
    """
    out = str(tmp_path / "out")
    assert main(["geometry-check", "--config", _config_file(tmp_path), "--output", out]) == EXIT_OK
    data = read_csv(os.path.join(out, "admissibility.csv"))
    assert [r["passed"] for r in data["records"]] == [1.0, 1.0, 1.0]
    with open(os.path.join(out, "manifest.json"), encoding="utf8") as f:
        manifest = json.load(f)
    assert [a["name"] for a in manifest["artifacts"]] == ["admissibility.csv"]
    assert len(manifest["config_sha256"]) == 64
    assert "Admissibility" in capsys.readouterr().out


def test_strict_mode_fails_on_a_steep_surface(tmp_path, capsys) -> None:
    text = SMALL + "surface:\n  preset: eggcarton\n  params: {amp: 0.5}\n"
    out = str(tmp_path / "out")
    code = main(["geometry-check", "--config", _config_file(tmp_path, text), "--output", out, "--strict"])
    assert code == EXIT_FAILED
    assert "error[verification]" in capsys.readouterr().err
    # the artifacts are written before the verdict
    assert os.path.isfile(os.path.join(out, "admissibility.csv"))


def test_usage_and_config_errors(tmp_path, capsys) -> None:
    """
    Bad command lines and bad scenarios exit with 2 and a classified error line.
    """
    assert main(["fly"]) == EXIT_USAGE
    assert capsys.readouterr().err.startswith("error[usage]")

    bad = _config_file(tmp_path, "grid:\n  nx: 100\n")
    assert main(["geometry-check", "--config", bad]) == EXIT_USAGE
    assert "error[config]" in capsys.readouterr().err

    out = str(tmp_path / "out")
    assert main(["geometry-check", "--config", _config_file(tmp_path), "--surface", "volcano",
                 "--output", out]) == EXIT_USAGE
    assert "error[surface]" in capsys.readouterr().err

    assert main(["residual-sweep", "--config", _config_file(tmp_path), "--output", out]) == EXIT_USAGE
    assert "error[config]" in capsys.readouterr().err

    assert main(["plot", "--output", out]) == EXIT_USAGE
    assert "--artifact" in capsys.readouterr().err


def test_simulate_then_plot(tmp_path, capsys) -> None:
    """
    simulate writes the norm series and snapshots; plot renders the series.
    """
    out = str(tmp_path / "out")
    config = _config_file(tmp_path)
    assert main(["simulate", "--config", config, "--output", out]) == EXIT_OK
    names = sorted(os.listdir(out))
    assert "norms.csv" in names and "decay.csv" in names
    assert [n for n in names if n.startswith("snapshot_")] == ["snapshot_0000.bin", "snapshot_0001.bin",
                                                                 "snapshot_0002.bin"]
    norms = read_csv(os.path.join(out, "norms.csv"))
    assert norms["column_names"][:5] == ["t", "L2_u", "L2_omega", "Linf_u", "Linf_grad_u"]
    assert len(norms["records"]) == 3

    assert main(["plot", "--config", config, "--output", out, "--artifact", os.path.join(out, "norms.csv")]) == EXIT_OK
    assert os.path.isfile(os.path.join(out, "norms.csv.svg"))


def test_reconstruct_over_curved_ground(tmp_path, capsys) -> None:
    out = str(tmp_path / "out")
    config = parse_config(SMALL + "surface:\n  preset: eggcarton\n  params: {amp: 0.05}\n")
    config = replace(config, output=replace(config.output, directory=out))
    result = run("reconstruct", config, stream=io.StringIO())
    assert result.passed
    names = [os.path.basename(p) for p in result.paths]
    for name in ("approx_field.bin", "profile_bottom.csv", "profile_top.csv", "assembly.csv", "manifest.json"):
        assert name in names
    quantities = [r["quantity"] for r in read_csv(os.path.join(out, "assembly.csv"))["records"]]
    assert "rho_transverse" in quantities and "L2_distance_to_limit" in quantities


def test_exit_codes_follow_the_error_class() -> None:
    assert exit_code(CflViolationError(1.0, 0.5)) == EXIT_FAILED
    assert exit_code(VerificationFailure("x")) == EXIT_FAILED
    assert exit_code(ConfigError(["x"])) == EXIT_USAGE
    assert exit_code(SurfaceError("x")) == EXIT_USAGE
    with pytest.raises(UsageError):
        build_parser().parse_args(["simulate", "--seed", "many"])
    with pytest.raises(UsageError):
        run("fly", parse_config(""))


def test_console_views() -> None:
    stream = io.StringIO()
    TableView("Rates", ["series", "rate"], [["energy", 0.25], ["enstrophy", "skipped"]], stream=stream).display()
    ChecksView("Checks", [Check("energy_rate", 0.3, ">= 0.1", True), Check("flat", None, "n/a", False)],
               stream).display()
    text = stream.getvalue()
    assert "2.5000e-01" in text and "skipped" in text
    assert "energy_rate" in text and "n/a" in text

    errors = io.StringIO()
    report_error("io", "cannot read x", errors)
    assert errors.getvalue() == "error[io]: cannot read x\n"


def _manifest_checksums(directory: str) -> dict:
    with open(os.path.join(directory, "manifest.json"), encoding="utf8") as f:
        return {entry["name"]: entry["sha256"] for entry in json.load(f)["artifacts"]}


def test_manifest_leaves_out_files_of_earlier_runs(tmp_path) -> None:
    out = tmp_path / "out"
    out.mkdir()
    (out / "norms.csv").write_text("stale\n", encoding="utf8")
    assert main(["geometry-check", "--config", _config_file(tmp_path), "--output", str(out)]) == EXIT_OK
    assert list(_manifest_checksums(str(out))) == ["admissibility.csv"]


def test_unwritable_artifact_is_an_io_error(tmp_path, capsys) -> None:
    """
    An artifact path taken by a directory exits with 2 and an io error line.
    """
    out = tmp_path / "out"
    (out / "admissibility.csv").mkdir(parents=True)
    assert main(["geometry-check", "--config", _config_file(tmp_path), "--output", str(out)]) == EXIT_USAGE
    assert "error[io]" in capsys.readouterr().err


def test_runs_are_reproducible(tmp_path) -> None:
    """
    Two runs of the same seeded scenario write byte identical artifacts.
    """
    text = SMALL + "initial:\n  preset: band-limited-random\n  seed: 3\n"
    config = _config_file(tmp_path, text)
    checksums = []
    for name in ("first", "second"):
        out = str(tmp_path / name)
        assert main(["simulate", "--config", config, "--output", out]) == EXIT_OK
        simulated = _manifest_checksums(out)
        assert main(["reconstruct", "--config", config, "--output", out]) == EXIT_OK
        checksums.append((simulated, _manifest_checksums(out)))
    assert checksums[0] == checksums[1]
    assert "snapshot_0000.bin" in checksums[0][0] and "approx_field.bin" in checksums[0][1]
