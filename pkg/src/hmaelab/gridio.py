"""Grid dump format and CSV export.

One file per chart: a fixed little-endian header

    magic b"HMAEGRD1", chart id (u1, 0 = Z, 1 = W), R (f8), n (u4), mask count (u4)

followed by the masked node indices (mask count pairs of u4, row-major
order) and the n*n values as row-major IEEE-754 doubles.  Masked nodes
hold ``SENTINEL``.  Reading back reproduces every bit.
"""
from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .p1geom import CHARTS, SENTINEL, W, Z, ChartGrid, GlobalFunction

MAGIC = b"HMAEGRD1"
_HEADER = struct.Struct("<8sBdII")
_CHART_ID = {Z: 0, W: 1}
_CHART_OF = {0: Z, 1: W}


class GridFormatError(ValueError):
    pass


def write_chart(path, cg: ChartGrid, mask=None):
    """Write one chart grid; ``mask`` defaults to the nodes holding SENTINEL."""
    vals = np.ascontiguousarray(cg.values, dtype="<f8")
    mask = vals == SENTINEL if mask is None else np.asarray(mask, bool)
    idx = np.argwhere(mask).astype("<u4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, _CHART_ID[cg.chart], float(cg.R), int(cg.n), len(idx)))
        fh.write(idx.tobytes())
        fh.write(vals.tobytes())


def read_chart(path):
    """(ChartGrid, mask) from a dump file."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise GridFormatError(f"{path}: truncated header")
    magic, cid, R, n, count = _HEADER.unpack_from(data)
    if magic != MAGIC or cid not in _CHART_OF:
        raise GridFormatError(f"{path}: not a grid dump")
    off = _HEADER.size
    need = off + 8 * count + 8 * n * n
    if len(data) != need:
        raise GridFormatError(f"{path}: expected {need} bytes, found {len(data)}")
    idx = np.frombuffer(data, "<u4", 2 * count, off).reshape(count, 2)
    vals = np.frombuffer(data, "<f8", n * n, off + 8 * count).reshape(n, n).astype(float)
    mask = np.zeros((n, n), bool)
    mask[idx[:, 0], idx[:, 1]] = True
    return ChartGrid(_CHART_OF[cid], R, n, vals), mask


def dump_function(f: GlobalFunction, directory, stem):
    """Write both charts of ``f`` (represented values) as ``stem_Z.grd``, ``stem_W.grd``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for cg in f.as_chart_grids():
        p = directory / f"{stem}_{cg.chart}.grd"
        write_chart(p, cg, f.mask(cg.chart))
        paths.append(p)
    return paths


def dump_arrays(grid, arrays, directory, stem):
    """Write a plain pair of chart arrays (no singular nodes besides non-finite values)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in CHARTS:
        vals = np.where(np.isfinite(arrays[c]), arrays[c], SENTINEL)
        p = directory / f"{stem}_{c}.grd"
        write_chart(p, ChartGrid(c, grid.R, grid.n, vals), ~np.isfinite(arrays[c]))
        paths.append(p)
    return paths


def chart_csv(cg: ChartGrid, fh=None):
    """Rows i, j, re, im, value with round-trip float formatting."""
    fh = fh or io.StringIO()
    wr = csv.writer(fh)
    wr.writerow(["i", "j", "re", "im", "value"])
    x = -cg.R + cg.h * np.arange(cg.n)
    for i in range(cg.n):
        for j in range(cg.n):
            wr.writerow([i, j, repr(float(x[i])), repr(float(x[j])), repr(float(cg.values[i, j]))])
    return fh


def read_chart_csv(fh, chart, R):
    """Inverse of :func:`chart_csv`."""
    rows = list(csv.reader(fh))[1:]
    n = int(round(np.sqrt(len(rows))))
    if n * n != len(rows):
        raise GridFormatError("CSV does not hold a square grid")
    vals = np.empty((n, n))
    for i, j, _, _, v in rows:
        vals[int(i), int(j)] = float(v)
    return ChartGrid(chart, R, n, vals)
