"""Field export (CSV, legacy ASCII VTK) and tabular data ingestion.

CSV conventions: comma separated, no quoting, one header row, floats
written with ``repr`` so that re-reading reproduces them bitwise.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, IoError, ParseError

_AXES = ("x", "y", "z")
_VTK_CELL = {3: 5, 4: 10}  # triangle, tetrahedron


def _fmt(v):
    return repr(float(v))


def export_field(mesh, values, path, format="csv", name="value"):
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n,):
        raise DimensionMismatch(f"{values.size} values for {mesh.n} vertices")
    fmt = format.lower()
    try:
        if fmt == "csv":
            _write_csv(mesh, values, path, name)
        elif fmt in ("vtk", "vtk-legacy"):
            _write_vtk(mesh, values, path, name)
        else:
            raise IoError(f"unknown export format {format!r}")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return Path(path)


def _write_csv(mesh, values, path, name):
    d = mesh.ambient_dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *_AXES[:d], name])
        for i in range(mesh.n):
            w.writerow([i, *map(_fmt, mesh.vertices[i]), _fmt(values[i])])


def _write_vtk(mesh, values, path, name):
    verts = mesh.vertices
    if verts.shape[1] == 2:
        verts = np.column_stack([verts, np.zeros(mesh.n)])
    simp = mesh.simplices
    k = simp.shape[1]
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nriemgrf field\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n} double\n")
        for p in verts:
            fh.write(" ".join(map(_fmt, p)) + "\n")
        fh.write(f"CELLS {len(simp)} {len(simp) * (k + 1)}\n")
        for s in simp:
            fh.write(f"{k} " + " ".join(map(str, s)) + "\n")
        fh.write(f"CELL_TYPES {len(simp)}\n")
        fh.write(f"{_VTK_CELL[k]}\n" * len(simp))
        fh.write(f"POINT_DATA {mesh.n}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n")
        for v in values:
            fh.write(_fmt(v) + "\n")


def read_table(path, required=None):
    """Header plus float body of a CSV file."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty file (header required)")
    header = [c.strip().lower() for c in rows[0]]
    try:
        float(header[0])
    except ValueError:
        pass
    else:
        raise ParseError(f"{path}: header row is mandatory")
    for k, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ParseError(f"{path}:{k}: expected {len(header)} fields, got {len(r)}")
    try:
        body = np.array([[float(c) for c in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    body = body.reshape(len(rows) - 1, len(header))
    if required:
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(f"{path}: missing columns {missing}")
    return header, body


def read_field_csv(path):
    """``(ids, coordinates, values)`` from a file written by :func:`export_field`."""
    header, body = read_table(path, ["id"])
    return body[:, 0].astype(int), body[:, 1:-1], body[:, -1]


def read_observations(path, d):
    """Observation CSV with columns ``x, y[, z], value``."""
    cols = [*_AXES[:d], "value"]
    header, body = read_table(path, cols)
    idx = [header.index(c) for c in cols]
    return body[:, idx[:-1]], body[:, idx[-1]]


def read_targets(path, d):
    cols = list(_AXES[:d])
    header, body = read_table(path, cols)
    return body[:, [header.index(c) for c in cols]]


def write_points(path, points, values, name="value"):
    """Coordinates plus one value column (e.g. kriging at targets)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points.shape[1]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*_AXES[:d], name])
            for p, v in zip(points, values):
                w.writerow([*map(_fmt, p), _fmt(v)])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
