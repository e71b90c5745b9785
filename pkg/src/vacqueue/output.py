"""CSV writers. Every file starts with a ``#`` comment block holding the fully
resolved configuration, so a run can be reconstructed from its output."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import __version__


def header_lines(config: Mapping) -> list[str]:
    lines = [f"# vacqueue {__version__}"]
    for key, val in config.items():
        if isinstance(val, (dict, list, tuple)):
            val = json.dumps(val, default=_jsonable, sort_keys=True)
        lines.append(f"# {key} = {val}")
    return lines


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    return str(o)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, columns: Iterable[str], rows: Iterable[Iterable], config: Mapping | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in header_lines(config or {}):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns))
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_rows(path) -> tuple[dict, list[str], list[list[str]]]:
    """Parse a file written by ``write_csv``: (header config, columns, raw string rows)."""
    config, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            if " = " in line:
                k, v = line[2:].split(" = ", 1)
                config[k] = v
        else:
            body.append(line)
    reader = csv.reader(body)
    cols = next(reader)
    return config, cols, list(reader)


def _num(x: str) -> float:
    try:
        return float(x)
    except ValueError:
        return math.nan


def read_csv(path) -> tuple[dict, list[str], np.ndarray]:
    """Like ``read_rows`` with every cell as float; text cells become nan."""
    config, cols, rows = read_rows(path)
    data = [[_num(x) for x in row] for row in rows]
    return config, cols, np.array(data, dtype=float).reshape(len(data), len(cols))


def trajectory_columns(m: int) -> list[str]:
    mid = ["v"] if m == 1 else [f"u{i + 1}" for i in range(m)]
    return ["t", "x", *mid, "l"]


def write_trajectory(path, traj, config: Mapping | None = None, stride: int = 1) -> Path:
    idx = np.arange(0, len(traj), stride)
    cols = trajectory_columns(traj.m)
    rows = (
        [traj.t[k], traj.x[k], *traj.u[k], traj.l[k]]
        for k in idx
    )
    return write_csv(path, cols, rows, config)


SNAPSHOT_COLUMNS = ("t", "q", "i", "v", "x_hat", "v_tilde")


def write_snapshots(path, snaps, config: Mapping | None = None) -> Path:
    cols = zip(snaps.t, snaps.q, snaps.i, snaps.v, snaps.x_hat, snaps.v_tilde)
    return write_csv(path, SNAPSHOT_COLUMNS, cols, config)
