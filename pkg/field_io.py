from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import struct

import numpy as np

from errors import FieldIOError

logger = logging.getLogger(__name__)

FIELD_MAGIC = b"EKMF"
FIELD_VERSION = 1
MANIFEST_NAME = "manifest.json"


def file_check(filename: str) -> bool:
    """
    Returns True if the file exists and is readable.
    """
    return os.path.isfile(filename) and os.access(filename, os.R_OK)


def read_sampled_surface(path: str) -> tuple[int, int, float, float, np.ndarray]:
    """
    Reads a sampled surface file: a header "Nx Ny Lx Ly" followed by Nx*Ny samples,
    row-major (i along x is the slow index). Line breaks are free.
    Returns (Nx, Ny, Lx, Ly, samples).
    """
    try:
        with open(path, encoding="utf8") as f:
            tokens = f.read().split()
    except OSError as e:
        raise FieldIOError(f"cannot read surface file {path}: {e}")

    # check if the header is complete
    try:
        assert len(tokens) >= 4
        nx, ny = int(tokens[0]), int(tokens[1])
        lx, ly = float(tokens[2]), float(tokens[3])
    except (AssertionError, ValueError):
        raise FieldIOError(f"surface file {path} needs a header 'Nx Ny Lx Ly'")

    body = tokens[4:]
    if len(body) != nx * ny:
        raise FieldIOError(f"surface file {path} holds {len(body)} samples, header announces {nx}x{ny}")
    try:
        samples = np.array([float(t) for t in body]).reshape(nx, ny)
    except ValueError as e:
        raise FieldIOError(f"surface file {path} has a non-numeric sample: {e}")
    return nx, ny, lx, ly, samples


def write_sampled_surface(path: str, lx: float, ly: float, samples: np.ndarray) -> None:
    """
    Writes samples in the sampled surface format, one grid row per line.
    """
    nx, ny = samples.shape
    lines = [f"{nx} {ny} {lx!r} {ly!r}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in samples)
    with open(path, "w", encoding="utf8") as f:
        f.write("\n".join(lines) + "\n")


def _cell(value: object) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str, column_names: list[str], rows: list[list[object]]) -> None:
    """
    Writes a CSV table with a header line. Floats are written with repr so the
    file is reproducible bit for bit.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(column_names)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    try:
        with open(path, "w", encoding="utf8", newline="") as f:
            f.write(buffer.getvalue())
    except OSError as e:
        raise FieldIOError(f"cannot write {path}: {e}")
    logger.debug("wrote %d rows to %s", len(rows), path)


def parse_raw_csv(raw: str) -> dict:
    """
    Takes the raw text of a CSV file and returns
    {"column_names": [...], "records": [{column: cell}, ...]}.
    """
    rows = list(csv.reader(io.StringIO(raw)))
    if not rows:
        return {"column_names": [], "records": []}
    column_names = rows[0]
    records = [dict(zip(column_names, row)) for row in rows[1:] if row]
    return {"column_names": column_names, "records": records}


def read_csv(path: str, numeric: bool = True) -> dict:
    """
    Reads a CSV file written by write_csv. Cells are converted to float when numeric
    is True and the cell parses as a number.
    """
    try:
        with open(path, encoding="utf8") as f:
            data = parse_raw_csv(f.read())
    except OSError as e:
        raise FieldIOError(f"cannot read {path}: {e}")

    if numeric:
        for record in data["records"]:
            for key, cell in record.items():
                try:
                    record[key] = float(cell)
                except ValueError:
                    pass
    return data


def csv_columns(data: dict, *names: str) -> list[np.ndarray]:
    """
    Returns the named columns of parsed CSV data as float arrays.
    """
    missing = [n for n in names if n not in data["column_names"]]
    if missing:
        raise FieldIOError(f"CSV data lacks column(s) {missing}")
    return [np.array([float(r[n]) for r in data["records"]]) for n in names]


class FieldSnapshot:
    """
    A set of named components on an (Nx, Ny, Nzeta) grid with the run parameters.
    2D fields use Nzeta = 1.
    """

    lx: float
    ly: float
    epsilon: float
    nu: float
    time: float
    names: list[str]
    data: np.ndarray     # (ncomp, Nx, Ny, Nzeta)

    def __init__(self, names: list[str], data: np.ndarray, lx: float, ly: float,
                 epsilon: float, nu: float, time: float) -> None:
        if data.ndim == 3:
            data = data[..., np.newaxis]
        try:
            assert data.ndim == 4 and data.shape[0] == len(names)
        except AssertionError:
            raise ValueError(f"snapshot data of shape {data.shape} does not match components {names}")
        self.names = list(names)
        self.data = np.ascontiguousarray(data, dtype="<f8")
        self.lx, self.ly = float(lx), float(ly)
        self.epsilon, self.nu, self.time = float(epsilon), float(nu), float(time)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape[1:])

    def component(self, name: str) -> np.ndarray:
        return self.data[self.names.index(name)]


def write_field_snapshot(path: str, snapshot: FieldSnapshot) -> None:
    """
    Writes a snapshot in the binary field format (all values little-endian):
        magic "EKMF", uint32 version,
        int64 Nx, Ny, Nzeta,
        float64 Lx, Ly, epsilon, nu, time,
        int64 ncomp, then per component int64 name length and utf8 name,
        float64 component arrays, row-major (component, i, j, zeta).
    """
    nx, ny, nz = snapshot.shape
    parts = [FIELD_MAGIC, struct.pack("<I", FIELD_VERSION), struct.pack("<3q", nx, ny, nz),
             struct.pack("<5d", snapshot.lx, snapshot.ly, snapshot.epsilon, snapshot.nu, snapshot.time),
             struct.pack("<q", len(snapshot.names))]
    for name in snapshot.names:
        encoded = name.encode("utf8")
        parts.append(struct.pack("<q", len(encoded)))
        parts.append(encoded)
    parts.append(snapshot.data.tobytes(order="C"))
    try:
        with open(path, "wb") as f:
            f.write(b"".join(parts))
    except OSError as e:
        raise FieldIOError(f"cannot write {path}: {e}")


def read_field_snapshot(path: str) -> FieldSnapshot:
    """
    Reads a snapshot written by write_field_snapshot.
    """
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise FieldIOError(f"cannot read {path}: {e}")

    if raw[:4] != FIELD_MAGIC:
        raise FieldIOError(f"{path} is not a field snapshot")
    try:
        (version,) = struct.unpack_from("<I", raw, 4)
        assert version == FIELD_VERSION
        nx, ny, nz = struct.unpack_from("<3q", raw, 8)
        lx, ly, epsilon, nu, time = struct.unpack_from("<5d", raw, 32)
        (ncomp,) = struct.unpack_from("<q", raw, 72)
        offset = 80
        names = []
        for _ in range(ncomp):
            (length,) = struct.unpack_from("<q", raw, offset)
            offset += 8
            names.append(raw[offset:offset + length].decode("utf8"))
            offset += length
        count = ncomp * nx * ny * nz
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(ncomp, nx, ny, nz)
    except (AssertionError, struct.error, ValueError) as e:
        raise FieldIOError(f"{path} is a corrupt field snapshot: {e}")
    return FieldSnapshot(names, data.copy(), lx, ly, epsilon, nu, time)


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(directory: str, config_hash: str, paths: list[str]) -> str:
    """
    Lists the artifacts this run wrote with their sha256 and size, sorted by name,
    in directory/manifest.json. Other files in directory are left out. Returns the
    manifest path.
    """
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    artifacts = []
    try:
        for path in sorted(set(paths), key=os.path.basename):
            if os.path.abspath(path) == os.path.abspath(manifest_path):
                continue
            artifacts.append({"name": os.path.basename(path), "sha256": sha256_file(path),
                              "bytes": os.path.getsize(path)})
        with open(manifest_path, "w", encoding="utf8") as f:
            json.dump({"config_sha256": config_hash, "artifacts": artifacts}, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise FieldIOError(f"cannot write the manifest in {directory}: {e}")
    logger.info("manifest lists %d artifacts", len(artifacts))
    return manifest_path
