"""Deterministic writers: field snapshots, CSV tables and JSON summaries.

Snapshots are raw little-endian float64 arrays in row-major order (first
index ``x``), one ``.bin`` file per field and step, each with a text sidecar
``.hdr`` of ``key = value`` lines for ``nx``, ``ny``, ``lx``, ``ly``, ``t``
and ``field``.
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

HEADER_KEYS = ("nx", "ny", "lx", "ly", "t", "field")


class SnapshotFormatError(ValueError):
    pass


def write_snapshot(path, field, grid, t, name):
    """Write ``field`` to ``path`` (``.bin``) plus its ``.hdr`` sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(np.asarray(field, dtype="<f8"))
    if arr.shape != grid.shape:
        raise SnapshotFormatError(f"field shape {arr.shape} does not match grid {grid.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    arr.tofile(path)
    header = {"nx": grid.nx, "ny": grid.ny, "lx": grid.lx, "ly": grid.ly, "t": t, "field": name}
    lines = [f"{k} = {_fmt(header[k])}" for k in HEADER_KEYS]
    path.with_suffix(".hdr").write_text("\n".join(lines) + "\n")
    return path


def read_header(path):
    path = Path(path)
    hdr = path.with_suffix(".hdr")
    if not hdr.exists():
        raise SnapshotFormatError(f"missing header {hdr}")
    out = {}
    for lineno, line in enumerate(hdr.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise SnapshotFormatError(f"{hdr}:{lineno}: expected 'key = value'")
        out[key.strip()] = val.strip()
    missing = [k for k in HEADER_KEYS if k not in out]
    if missing:
        raise SnapshotFormatError(f"{hdr}: missing keys {missing}")
    return {
        "nx": int(out["nx"]),
        "ny": int(out["ny"]),
        "lx": float(out["lx"]),
        "ly": float(out["ly"]),
        "t": float(out["t"]),
        "field": out["field"],
    }


def read_snapshot(path):
    """Return ``(array, header)`` for a snapshot written by :func:`write_snapshot`."""
    header = read_header(path)
    data = np.fromfile(Path(path), dtype="<f8")
    n = header["nx"] * header["ny"]
    if data.size != n:
        raise SnapshotFormatError(f"{path}: {data.size} values, header says {n}")
    return data.reshape(header["nx"], header["ny"]).astype(float), header


class SnapshotWriter:
    """Writes every ``stride``-th step of the requested fields into ``directory``.

    ``stride = 0`` disables output; the last step is always written when
    ``final_step`` is given.
    """

    def __init__(self, directory, grid, stride, prefix="", final_step=None):
        self.directory = Path(directory)
        self.grid = grid
        self.stride = int(stride)
        self.prefix = prefix
        self.final_step = final_step
        self.written = []

    def due(self, n):
        if self.stride <= 0:
            return False
        return n % self.stride == 0 or n == self.final_step

    def maybe_write(self, n, t, **fields):
        if not self.due(n):
            return
        for name, arr in sorted(fields.items()):
            path = self.directory / f"{self.prefix}{name}_{n:06d}.bin"
            self.written.append(write_snapshot(path, arr, self.grid, t, name))


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, fieldnames, rows):
    """CSV with fixed column order, ``repr`` floats and ``\\n`` line ends."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in fieldnames])
    return path


def columns_to_rows(columns):
    """Dict of equal-length sequences to a list of row dicts."""
    keys = list(columns)
    n = len(columns[keys[0]]) if keys else 0
    return [{k: _scalar(columns[k][i]) for k in keys} for i in range(n)]


def _scalar(x):
    if isinstance(x, np.generic):
        return x.item()
    return x


def jsonable(obj):
    """Recursively convert numpy scalars, tuples and non-finite floats."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


__all__ = [
    "HEADER_KEYS",
    "SnapshotFormatError",
    "SnapshotWriter",
    "columns_to_rows",
    "jsonable",
    "read_header",
    "read_snapshot",
    "write_csv",
    "write_json",
    "write_snapshot",
]
