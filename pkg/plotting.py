from __future__ import annotations

import logging
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from errors import FieldIOError
from field_io import csv_columns, file_check, read_csv, read_field_snapshot

logger = logging.getLogger(__name__)

PLOT_KINDS = ("series", "profile", "field")

# fixed ids and no date keep the SVG bytes reproducible
matplotlib.rcParams["svg.hashsalt"] = "ekman-layers"
matplotlib.rcParams["svg.fonttype"] = "path"


def _footer(fig: plt.Figure, source: str, config_hash: str | None) -> None:
    text = f"source: {os.path.basename(source)}"
    if config_hash:
        text += f"  config sha256: {config_hash[:16]}"
    fig.text(0.01, 0.01, text, fontsize=6, color="0.4")


def _save(fig: plt.Figure, path: str) -> str:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info("wrote %s", path)
    return path


def detect_kind(path: str) -> str:
    """
    Guesses the plot kind of an artifact: field for snapshots, profile for
    layer profile dumps, series otherwise.
    """
    if path.endswith(".bin"):
        return "field"
    data = read_csv(path)
    return "profile" if "z_tilde" in data["column_names"] else "series"


def plot_series(path: str, output: str, nu: float | None = None, config_hash: str | None = None) -> str:
    """
    Plots every column of a time series CSV against t on a log scale, each divided
    by its first value, with the reference decay exp(-sqrt(2 nu) / 8 t) when nu is given.
    """
    data = read_csv(path)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.set_xlabel("t")
    ax.set_ylabel("norm / initial norm")

    if not data["records"] or "t" not in data["column_names"]:
        ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
    else:
        (t,) = csv_columns(data, "t")
        for name in data["column_names"]:
            if name == "t":
                continue
            (values,) = csv_columns(data, name)
            if values[0] > 0 and np.all(values > 0):
                ax.plot(t, values / values[0], label=name, linewidth=1.2)
        if nu is not None:
            rate = np.sqrt(2.0 * nu) / 8.0
            ax.plot(t, np.exp(-rate * (t - t[0])), "k--", linewidth=1.0, label=f"exp(-{rate:.4g} t)")
        ax.set_yscale("log")
        ax.legend(fontsize=7)

    ax.set_title("decay of the limit flow")
    _footer(fig, path, config_hash)
    return _save(fig, output)


def plot_profile(path: str, output: str, config_hash: str | None = None) -> str:
    """
    Plots a layer profile dump: the hodograph of the order-0 horizontal velocity
    (the Ekman spiral) and every profile against the stretched coordinate.
    """
    data = read_csv(path)
    fig, (spiral, lines) = plt.subplots(1, 2, figsize=(9.6, 4.2))

    if not data["records"]:
        for ax in (spiral, lines):
            ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
    else:
        z, u1, u2 = csv_columns(data, "z_tilde", "U0_1", "U0_2")
        spiral.plot(u1, u2, linewidth=1.2)
        spiral.plot(u1[:1], u2[:1], "o", markersize=4)
        spiral.set_aspect("equal", adjustable="datalim")
        for name in data["column_names"][1:]:
            (values,) = csv_columns(data, name)
            lines.plot(values, z, label=name, linewidth=1.0)
        lines.set_ylim(0.0, float(z.max()))
        lines.legend(fontsize=7)

    spiral.set_xlabel("U0_1")
    spiral.set_ylabel("U0_2")
    spiral.set_title("order-0 hodograph")
    lines.set_xlabel("value")
    lines.set_ylabel("z_tilde")
    lines.set_title("layer profiles")
    _footer(fig, path, config_hash)
    return _save(fig, output)


def plot_field(path: str, output: str, level: float | None = None, config_hash: str | None = None) -> str:
    """
    Plots |U_h| of an approximate solution snapshot on the zeta level closest to
    level, by default the flat layer thickness sqrt(nu) eps, as a heatmap.
    """
    snapshot = read_field_snapshot(path)
    missing = [n for n in ("U_1", "U_2", "zeta") if n not in snapshot.names]
    if missing:
        raise FieldIOError(f"{path} lacks component(s) {missing} for a field plot")

    zeta = snapshot.component("zeta")[0, 0]
    if level is None:
        level = np.sqrt(snapshot.nu) * snapshot.epsilon
    k = int(np.argmin(np.abs(zeta - level)))
    speed = np.hypot(snapshot.component("U_1")[..., k], snapshot.component("U_2")[..., k])

    fig, ax = plt.subplots(figsize=(5.6, 4.8))
    image = ax.imshow(speed.T, origin="lower", extent=(0.0, snapshot.lx, 0.0, snapshot.ly), cmap="viridis")
    fig.colorbar(image, ax=ax, label="|U_h|")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(f"|U_h| at zeta = {zeta[k]:.3e} (eps = {snapshot.epsilon:g}, t = {snapshot.time:.3g})")
    _footer(fig, path, config_hash)
    return _save(fig, output)


def plot_artifact(path: str, kind: str | None = None, nu: float | None = None,
                  config_hash: str | None = None) -> str:
    """
    Renders an artifact to <artifact>.svg and returns the SVG path.
    """
    if not file_check(path):
        raise FieldIOError(f"no artifact at {path}")
    kind = kind or detect_kind(path)
    try:
        assert kind in PLOT_KINDS
    except AssertionError:
        raise ValueError(f"unknown plot kind '{kind}' (known: {', '.join(PLOT_KINDS)})")

    output = path + ".svg"
    if kind == "series":
        return plot_series(path, output, nu, config_hash)
    if kind == "profile":
        return plot_profile(path, output, config_hash)
    return plot_field(path, output, config_hash=config_hash)


if __name__ == "__main__":
    import sys

    for artifact in sys.argv[1:]:
        print(plot_artifact(artifact))
