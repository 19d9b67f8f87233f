"""Trajectory files and CSV tables.

Trajectory layout (all little-endian)::

    magic     4s   b"XDIF"
    version   u16
    dim       u16
    n         u16
    cells     u32  cells per axis
    dt_snap   f64
    snapshots u32
    t_start   f64
    extent    f64 x dim
    crc32     u32  of every header byte above
    payload   f64 x (snapshots * cells^dim * n), snapshot-major, then cell, then species
"""

from __future__ import annotations

import csv
import struct
import zlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorruptTrajectory
from .grid import Field, SpaceTimeGrid

MAGIC = b"XDIF"
VERSION = 1
_FIXED = struct.Struct("<4sHHHIdId")
_CRC = struct.Struct("<I")


def _header_bytes(grid: SpaceTimeGrid) -> bytes:
    fixed = _FIXED.pack(MAGIC, VERSION, grid.dim, grid.n_species, grid.cells_per_axis,
                        grid.dt, grid.snapshots, grid.t_start)
    return fixed + struct.pack(f"<{grid.dim}d", *grid.extent)


def write_trajectory(path: str | Path, field: Field) -> None:
    header = _header_bytes(field.grid)
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(_CRC.pack(zlib.crc32(header)))
        fh.write(payload)
    tmp.replace(path)


def read_trajectory(path: str | Path) -> Field:
    data = Path(path).read_bytes()
    if len(data) < _FIXED.size + _CRC.size:
        raise CorruptTrajectory("file too short for a trajectory header")
    magic, version, dim, n, cells, dt, snaps, t_start = _FIXED.unpack_from(data)
    if magic != MAGIC:
        raise CorruptTrajectory(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptTrajectory(f"unsupported format version {version}")
    if dim not in (1, 2):
        raise CorruptTrajectory(f"bad dimension {dim}")
    hlen = _FIXED.size + 8 * dim
    if len(data) < hlen + _CRC.size:
        raise CorruptTrajectory("truncated header")
    header = data[:hlen]
    (crc,) = _CRC.unpack_from(data, hlen)
    if crc != zlib.crc32(header):
        raise CorruptTrajectory("header checksum mismatch")
    extent = struct.unpack_from(f"<{dim}d", data, _FIXED.size)
    try:
        grid = SpaceTimeGrid(dim, extent, cells, dt, snaps, n, t_start)
    except ValueError as exc:
        raise CorruptTrajectory(f"invalid header values: {exc}") from exc
    payload = data[hlen + _CRC.size:]
    expected = snaps * cells**dim * n * 8
    if len(payload) != expected:
        raise CorruptTrajectory(f"payload has {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f8").reshape(grid.values_shape)
    try:
        return Field(grid, values)
    except ValueError as exc:
        raise CorruptTrajectory(str(exc)) from exc


def fmt_float(v) -> str:
    """17 significant digits: enough to round-trip any binary64."""
    return format(float(v), ".17g")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(_cell(x) for x in v)
    return str(v)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
