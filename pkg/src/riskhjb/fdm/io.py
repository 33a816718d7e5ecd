"""CSV export of grid fields and the binary lookup-table format.

Lookup-table layout (little endian)::

    magic   8 bytes   b"RHJBLUT1"
    ndim    uint32
    ncomp   uint32
    ntimes  uint32
    shape   uint32[ndim]
    bounds  float64[ndim, 2]
    times   float64[ntimes]
    values  float64[ntimes, *shape, ncomp]   (row-major)
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from ..errors import MissingArtifact, ValidationError

MAGIC = b"RHJBLUT1"


def coord_names(d):
    return ["x", "y", "z"][:d] if d <= 3 else [f"x{i}" for i in range(d)]


def _fmt(v):
    return "nan" if not np.isfinite(v) else repr(float(v))


def write_field_csv(path, grid, values, names=("value",), skip_excluded=True):
    """One row per node: coordinates followed by the field components."""
    values = np.asarray(values, dtype=float).reshape(grid.size, -1)
    keep = grid.valid_idx if skip_excluded else np.arange(grid.size)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(coord_names(grid.ndim) + list(names))
        for i in keep:
            w.writerow([_fmt(c) for c in grid.points[i]] + [_fmt(v) for v in values[i]])


def write_lut(path, bounds, times, values):
    bounds = np.asarray(bounds, dtype="<f8")
    times = np.asarray(times, dtype="<f8")
    values = np.ascontiguousarray(values, dtype="<f8")
    ndim = bounds.shape[0]
    shape = values.shape[1:1 + ndim]
    ncomp = values.shape[-1] if values.ndim == ndim + 2 else 1
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", ndim, ncomp, times.size))
        fh.write(struct.pack(f"<{ndim}I", *shape))
        fh.write(bounds.tobytes())
        fh.write(times.tobytes())
        fh.write(values.tobytes())


def read_lut(path):
    """Return ``(bounds, times, values)`` with ``values`` shaped ``(nt, *shape, ncomp)``."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"lookup table {path} does not exist")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ValidationError(f"{path} is not a lookup-table file")
    off = 8
    ndim, ncomp, nt = struct.unpack_from("<III", raw, off)
    off += 12
    shape = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    bounds = np.frombuffer(raw, "<f8", 2 * ndim, off).reshape(ndim, 2).copy()
    off += 16 * ndim
    times = np.frombuffer(raw, "<f8", nt, off).copy()
    off += 8 * nt
    count = nt * int(np.prod(shape)) * ncomp
    values = np.frombuffer(raw, "<f8", count, off).reshape((nt,) + tuple(shape) + (ncomp,))
    return bounds, times, values.copy()
