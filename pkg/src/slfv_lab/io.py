"""CSV tables and the binary Field container."""
from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .torus import Field, TorusGrid

MAGIC = b"SLFVFLD1"
_HEADER = struct.Struct("<8s4q")  # magic, d, n, m, N


def fmt(x) -> str:
    """Cell formatting: floats at 17 significant digits, everything else via ``str``."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_field(path: str | Path, f: Field) -> Path:
    """Header ``(d, n, m, N)`` then row-major little-endian doubles."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, g.d, g.n, g.m, g.N))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    return path


def read_field(path: str | Path) -> Field:
    raw = Path(path).read_bytes()
    magic, d, n, m, N = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a field container")
    grid = TorusGrid(d, n, m)
    if grid.N != N:
        raise ValueError(f"{path}: header N={N} inconsistent with n*m={grid.N}")
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if vals.size != grid.size:
        raise ValueError(f"{path}: payload has {vals.size} values, expected {grid.size}")
    return Field(grid, vals.reshape(grid.shape).astype(float))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
