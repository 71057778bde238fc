"""CSV artifacts with a versioned schema line and JSON sidecar metadata.

Every table starts with a comment line ``# schema: <name>/<version>``
followed by a normal header row. The sidecar ``<file>.meta.json`` holds the
seed, the configuration hash and the package version. Floats are written
with ``repr`` precision, so identical runs produce identical bytes.
"""
from __future__ import annotations

import csv
import json
from importlib import metadata
from pathlib import Path
from typing import Sequence

import numpy as np

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


def package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_table(path: str | Path, schema: str, columns: Sequence[str], rows, meta: dict | None = None) -> Path:
    """Write ``rows`` (2-D array or iterable of sequences) under ``columns``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema: {schema}/{SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise SchemaError(f"row has {len(row)} fields, header has {len(columns)}")
            w.writerow([_fmt(v) for v in row])
    if meta is not None:
        write_meta(path, {"schema": f"{schema}/{SCHEMA_VERSION}", **meta})
    return path


def read_table(path: str | Path, schema: str | None = None) -> tuple[list[str], np.ndarray]:
    """Return ``(columns, data)``; ``data`` is a float array, one row per sample."""
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema:"):
            raise SchemaError(f"{path}: missing schema line")
        name, _, version = first.split(":", 1)[1].strip().rpartition("/")
        if schema is not None and name != schema:
            raise SchemaError(f"{path}: expected schema {schema!r}, found {name!r}")
        if int(version) != SCHEMA_VERSION:
            raise SchemaError(f"{path}: unsupported schema version {version}")
        reader = csv.reader(fh)
        columns = next(reader)
        data = np.array([[float(v) for v in row] for row in reader], dtype=float)
    return columns, data.reshape(-1, len(columns))


def meta_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta.json")


def write_meta(path: str | Path, meta: dict) -> None:
    body = {"version": package_version(), **meta}
    meta_path(path).write_text(json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_meta(path: str | Path) -> dict:
    return json.loads(meta_path(path).read_text())


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --- trajectories ------------------------------------------------------------

TRAJECTORY_SCHEMA = "trajectory"


def trajectory_columns(n_x: int, n_u: int, n_y: int, x_names=None, u_names=None) -> list[str]:
    x_names = list(x_names) if x_names else [f"x{i}" for i in range(n_x)]
    u_names = list(u_names) if u_names else [f"u{i}" for i in range(n_u)]
    return ["t", *x_names, *u_names, *[f"y{i}" for i in range(n_y)]]


def write_trajectory(path, traj, meta: dict, x_names=None, u_names=None) -> Path:
    cols = trajectory_columns(traj.x.shape[1], traj.u.shape[1], traj.y.shape[1], x_names, u_names)
    rows = np.column_stack([traj.t, traj.x, traj.u, traj.y])
    dims = {"n_x": traj.x.shape[1], "n_u": traj.u.shape[1], "n_y": traj.y.shape[1]}
    return write_table(path, TRAJECTORY_SCHEMA, cols, rows, {**meta, **dims})


def read_trajectory(path):
    """Return ``(t, x, u, y, meta)``."""
    _, data = read_table(path, TRAJECTORY_SCHEMA)
    meta = read_meta(path)
    nx, nu = meta["n_x"], meta["n_u"]
    t = data[:, 0]
    x = data[:, 1:1 + nx]
    u = data[:, 1 + nx:1 + nx + nu]
    y = data[:, 1 + nx + nu:]
    if y.shape[1] != meta["n_y"]:
        raise SchemaError(f"{path}: column count does not match recorded dimensions")
    return t, x, u, y, meta


def write_manifest(out_dir: str | Path, entry: dict) -> Path:
    """Append one command record to ``manifest.json`` in ``out_dir``."""
    path = Path(out_dir) / "manifest.json"
    runs = json.loads(path.read_text())["runs"] if path.is_file() else []
    runs.append({"version": package_version(), **entry})
    path.write_text(json.dumps({"runs": runs}, indent=2, default=_json_default) + "\n")
    return path
