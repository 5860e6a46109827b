import numpy as np
import pytest

from errors import FieldIOError
from field_io import FieldSnapshot, write_csv, write_field_snapshot
from plotting import detect_kind, plot_artifact


def _series(path: str) -> None:
    t = np.linspace(0.0, 2.0, 11)
    write_csv(path, ["t", "L2_u", "Linf_u"], [[v, np.exp(-0.2 * v), 0.5 * np.exp(-0.3 * v)] for v in t])


def test_series_plots_are_reproducible(tmp_path) -> None:
    """
    Rendering the same CSV twice gives the same SVG bytes.
    """
    path = str(tmp_path / "norms.csv")
    _series(path)
    assert detect_kind(path) == "series"
    output = plot_artifact(path, nu=0.1, config_hash="0" * 64)
    assert output == path + ".svg"
    with open(output, "rb") as f:
        first = f.read()
    plot_artifact(path, nu=0.1, config_hash="0" * 64)
    with open(output, "rb") as f:
        assert f.read() == first


def test_empty_series_says_no_data(tmp_path) -> None:
    path = str(tmp_path / "empty.csv")
    write_csv(path, ["t", "L2_u"], [])
    with open(plot_artifact(path)) as f:
        svg = f.read()
    assert svg.startswith("<?xml")


def test_profile_and_field_plots(tmp_path) -> None:
    profile = str(tmp_path / "profile_bottom.csv")
    z = np.linspace(0.0, 10.0, 20)
    columns = ["z_tilde", "U0_1", "U0_2", "U0_3", "U1_1", "U1_2", "U1_3", "P1"]
    write_csv(profile, columns, [[v] + [np.exp(-v) * np.cos(v)] * 7 for v in z])
    assert detect_kind(profile) == "profile"
    assert plot_artifact(profile).endswith(".svg")

    field = str(tmp_path / "approx_field.bin")
    zeta = np.broadcast_to(np.linspace(0.0, 2.0, 5), (8, 8, 5))
    data = np.stack([np.ones((8, 8, 5)), np.zeros((8, 8, 5)), zeta])
    write_field_snapshot(field, FieldSnapshot(["U_1", "U_2", "zeta"], data, 6.28, 6.28, 1e-2, 0.1, 1.0))
    assert detect_kind(field) == "field"
    assert plot_artifact(field).endswith(".bin.svg")


def test_plot_errors(tmp_path) -> None:
    with pytest.raises(FieldIOError):
        plot_artifact(str(tmp_path / "absent.csv"))
    path = str(tmp_path / "series.csv")
    _series(path)
    with pytest.raises(ValueError):
        plot_artifact(path, kind="histogram")

    field = str(tmp_path / "snapshot.bin")
    write_field_snapshot(field, FieldSnapshot(["omega"], np.zeros((1, 8, 8)), 1.0, 1.0, 0.1, 0.1, 0.0))
    with pytest.raises(FieldIOError):
        plot_artifact(field)
