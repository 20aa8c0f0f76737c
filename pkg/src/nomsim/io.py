"""Legacy ASCII VTK point snapshots and CSV time series."""

from __future__ import annotations

import csv
import re

import numpy as np

_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _fmt(x) -> str:
    # 17 significant digits round-trips every double; Python formatting
    # ignores the locale, so the decimal point is always '.'
    return format(float(x), ".17g")


def _pad3(a):
    a = np.asarray(a, dtype=float)
    if a.shape[1] == 3:
        return a
    return np.hstack([a, np.zeros((a.shape[0], 3 - a.shape[1]))])


def write_vtk_snapshot(positions, fields, path, title="nomsim snapshot"):
    """Write points and point fields as legacy VTK POLYDATA.

    Parameters
    ----------
    positions : (N, 2) or (N, 3) array
    fields : mapping name -> (N,) scalar or (N, 2|3) vector array
    path : output file
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] not in (2, 3):
        raise ValueError("positions must have shape (N, 2) or (N, 3)")
    n = pos.shape[0]
    prepared = []
    for name, arr in fields.items():
        if not _NAME.match(name):
            raise ValueError(f"invalid field name {name!r}")
        arr = np.asarray(arr, dtype=float)
        if arr.shape[0] != n:
            raise ValueError(f"field {name!r} has {arr.shape[0]} values for {n} points")
        if arr.ndim == 1:
            prepared.append(("SCALARS", name, arr))
        elif arr.ndim == 2 and arr.shape[1] in (2, 3):
            prepared.append(("VECTORS", name, _pad3(arr)))
        else:
            raise ValueError(f"field {name!r} must be scalar or a 2/3-vector per point")

    title = title.replace("\n", " ")[:255]
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA",
             f"POINTS {n} double"]
    lines += [" ".join(_fmt(v) for v in row) for row in _pad3(pos)]
    lines.append(f"VERTICES {n} {2 * n}")
    lines += [f"1 {i}" for i in range(n)]
    if prepared:
        lines.append(f"POINT_DATA {n}")
        for kind, name, arr in prepared:
            if kind == "SCALARS":
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [_fmt(v) for v in arr]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [" ".join(_fmt(v) for v in row) for row in arr]
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write snapshot {path}: {exc.strerror or exc}") from exc


def read_vtk_points(path):
    """Minimal reader for files written by :func:`write_vtk_snapshot`.

    Returns (positions (N, 3), {name: array}).
    """
    with open(path, encoding="ascii") as fh:
        tokens = fh.read().split("\n")
    if not tokens[0].startswith("# vtk DataFile Version") or tokens[2] != "ASCII":
        raise ValueError("not a legacy ASCII VTK file")
    if tokens[3] != "DATASET POLYDATA":
        raise ValueError("expected POLYDATA")
    k = 4
    head = tokens[k].split()
    if head[0] != "POINTS":
        raise ValueError("missing POINTS section")
    n = int(head[1])
    pos = np.array([[float(v) for v in tokens[k + 1 + i].split()] for i in range(n)])
    k += 1 + n
    head = tokens[k].split()
    if head[0] != "VERTICES" or int(head[1]) != n or int(head[2]) != 2 * n:
        raise ValueError("malformed VERTICES section")
    k += 1 + n
    fields = {}
    if k < len(tokens) and tokens[k].startswith("POINT_DATA"):
        if int(tokens[k].split()[1]) != n:
            raise ValueError("POINT_DATA count mismatch")
        k += 1
        while k < len(tokens) and tokens[k]:
            head = tokens[k].split()
            if head[0] == "SCALARS":
                if tokens[k + 1] != "LOOKUP_TABLE default":
                    raise ValueError("missing LOOKUP_TABLE")
                fields[head[1]] = np.array([float(tokens[k + 2 + i]) for i in range(n)])
                k += 2 + n
            elif head[0] == "VECTORS":
                fields[head[1]] = np.array([[float(v) for v in tokens[k + 1 + i].split()]
                                            for i in range(n)])
                k += 1 + n
            else:
                raise ValueError(f"unexpected section {head[0]!r}")
    return pos, fields


def write_series_csv(series, path):
    """Header plus one row per record of an engine TimeSeries."""
    if not len(series):
        raise ValueError("empty time series")
    try:
        with open(path, "w", encoding="ascii", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(series.columns)
            for row in series.rows:
                w.writerow([str(v) if isinstance(v, (int, np.integer)) else _fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write series {path}: {exc.strerror or exc}") from exc


def read_series_csv(path):
    with open(path, encoding="ascii", newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]) if len(rows) > 1 else np.empty((0, len(header)))
    return header, data


def write_events_csv(events, path):
    """Bond-breaking log: step, i, j, s_hg."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "i", "j", "s_hg"])
        for step, i, j, s in events:
            w.writerow([int(step), int(i), int(j), _fmt(s)])
