"""CSV readers and writers for paths, filter output, boundaries, value slices and surfaces.

Floats are written with repr-exact ``.17g`` formatting and ``\\n`` line
endings so equal inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .boundary import BoundaryTable, ValueSlice
from .errors import ConfigError
from .simulate import SamplePath

PATH_HEADER = ["t", "X", "pi", "phi", "dBbar"]


def fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return format(float(v), ".17g")


def _write(path, comments, header, rows):
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([x if isinstance(x, str) else fmt(x) for x in r])
    Path(path).write_text(buf.getvalue())


def _read(path):
    comments, rows = [], []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh.read().splitlines()]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            comments.append(ln[1:].strip())
        elif ln.strip():
            body.append(ln)
    reader = csv.reader(body)
    header = next(reader, None)
    if header is None:
        raise ConfigError("CSV file has no header", str(path))
    rows = list(reader)
    return comments, [h.strip() for h in header], rows


def _kv(comments):
    out = {}
    for c in comments:
        for part in c.split(","):
            if "=" in part:
                k, v = part.split("=", 1)
                out[k.strip()] = v.strip()
    return out


def write_path(path, times, X, pi=None, phi=None, dBbar=None, theta=math.inf, seed=None):
    n = len(times)
    pi = [None] * n if pi is None else pi
    phi = [None] * n if phi is None else phi
    dB = list(dBbar) + [None] if dBbar is not None else [None] * n
    rows = zip(times, X, pi, phi, dB)
    _write(path, [f"theta={fmt(theta)}, seed={seed}"], PATH_HEADER, rows)


def read_path(path) -> SamplePath:
    comments, header, rows = _read(path)
    if header[:2] != ["t", "X"]:
        raise ConfigError(f"expected header starting with t,X; got {','.join(header)}", str(path))
    meta = _kv(comments)
    t = np.array([float(r[0]) for r in rows])
    X = np.array([float(r[1]) for r in rows])
    col = header.index("dBbar") if "dBbar" in header else None
    dB = np.array([float(r[col]) for r in rows[:-1]]) if col is not None and all(
        len(r) > col and r[col] for r in rows[:-1]) else np.zeros(max(len(rows) - 1, 0))
    theta = float(meta.get("theta", "inf") or "inf")
    seed = meta.get("seed")
    return SamplePath(t, X, dB, theta, int(seed) if seed not in (None, "None", "") else None)


def write_filter(path, track):
    _write(path, [], ["t", "logL", "phi", "pi"], zip(track.t, track.logL, track.phi, track.pi))


def write_boundary(path, table: BoundaryTable, extra: dict | None = None):
    comments = [f"penalty={table.penalty}", f"z={fmt(table.z)}", f"solver={table.solver}",
                f"tolerance={fmt(table.tolerance)}"]
    for k, v in (extra or {}).items():
        comments.append(f"{k}={v if isinstance(v, str) else fmt(v)}")
    _write(path, comments, ["coord", "grid", "h"], ((table.coordinate, g, h) for g, h in zip(table.grid, table.h)))


def read_boundary(path) -> BoundaryTable:
    comments, header, rows = _read(path)
    if header != ["coord", "grid", "h"]:
        raise ConfigError(f"expected header coord,grid,h; got {','.join(header)}", str(path))
    meta = _kv(comments)
    coords = {r[0] for r in rows}
    if len(coords) != 1:
        raise ConfigError("boundary file mixes coordinates", str(path))
    grid = np.array([float(r[1]) for r in rows])
    h = np.array([float(r[2]) for r in rows])
    z = float(meta.get("z") or "nan")
    tol = float(meta.get("tolerance") or "nan")
    extra = {k: v for k, v in meta.items() if k not in ("penalty", "z", "solver", "tolerance")}
    return BoundaryTable(coords.pop(), grid, h, meta.get("penalty", ""), z, meta.get("solver", ""), tol, extra)


def write_value_slice(path, vs: ValueSlice):
    _write(path, [f"y={fmt(vs.y)}", f"boundary={fmt(vs.boundary)}"], ["phi", vs.name], zip(vs.phi, vs.values))


def write_surface(path, grid):
    rows = ((p, y, grid.H[j, i], int(grid.active[j, i]))
            for j, y in enumerate(grid.y) for i, p in enumerate(grid.phi))
    _write(path, [f"residual={fmt(grid.residual)}"], ["phi", "y", "H", "active"], rows)
