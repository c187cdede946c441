"""Binary field snapshots with a self-describing header and a text sidecar.

Layout (little endian)::

    8s   magic  b"NFRBC\\x00\\x01\\x00"
    I    header length in bytes (including magic)
    II   Nx, Nz
    dd   Lx, Lz
    d    t
    dd   Ra, Pr
    16s  form, NUL padded
    I    number of fields
    then, per field: 16s name, followed by all field data as complex128
    arrays of shape (Nx//2+1, Nz-1) in C order.

The sidecar ``<path>.meta.txt`` repeats the header as ``key = value`` lines
plus free-form metadata (boundary conditions, seed, ...).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError
from .grid import RBCGrid
from .solver import RBCFields, RBCParams

__all__ = ["MAGIC", "write_snapshot", "read_snapshot", "sidecar_path"]

MAGIC = b"NFRBC\x00\x01\x00"
_FIXED = struct.Struct("<8sIIIdddddd16sI")
_NAME = struct.Struct("<16s")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.txt")


def write_snapshot(path, fields: RBCFields, t: float, params: RBCParams, metadata: dict | None = None) -> Path:
    path = Path(path)
    g = fields.grid
    names = ("zeta", "theta")
    header_len = _FIXED.size + _NAME.size * len(names)
    head = _FIXED.pack(MAGIC, header_len, g.Nx, g.Nz, g.Lx, g.Lz, float(t), params.Ra, params.Pr,
                       0.0, params.form.encode(), len(names))
    try:
        with open(path, "wb") as fh:
            fh.write(head)
            for name in names:
                fh.write(_NAME.pack(name.encode()))
            for name in names:
                fh.write(np.ascontiguousarray(getattr(fields, name), dtype="<c16").tobytes())
        meta = {
            "format": "nudgefit-rbc-snapshot 1",
            "Nx": g.Nx, "Nz": g.Nz, "Lx": repr(g.Lx), "Lz": repr(g.Lz),
            "t": repr(float(t)), "Ra": repr(params.Ra), "Pr": repr(params.Pr), "form": params.form,
            "fields": ",".join(names), "dtype": "complex128 little-endian",
            "boundary_conditions": "free-slip, fixed temperature",
            "temperature": "deviation from conductive profile",
        }
        meta.update({k: str(v) for k, v in (metadata or {}).items()})
        sidecar_path(path).write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))
    except OSError as exc:
        raise OSError(f"cannot write snapshot {path}: {exc}") from exc
    return path


def read_snapshot(path):
    """Returns ``(fields, t, params)``."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _FIXED.size or data[:8] != MAGIC:
        raise ConfigurationError(f"{path} is not a snapshot file")
    magic, hlen, Nx, Nz, Lx, Lz, t, Ra, Pr, _, form, nf = _FIXED.unpack_from(data)
    names = [_NAME.unpack_from(data, _FIXED.size + i * _NAME.size)[0].rstrip(b"\0").decode() for i in range(nf)]
    grid = RBCGrid(Nx, Nz, Lx, Lz)
    size = int(np.prod(grid.shape))
    expected = hlen + nf * size * 16
    if len(data) != expected:
        raise ConfigurationError(f"{path}: expected {expected} bytes, found {len(data)}")
    arrays = {}
    for i, name in enumerate(names):
        off = hlen + i * size * 16
        arrays[name] = np.frombuffer(data, dtype="<c16", count=size, offset=off).reshape(grid.shape).copy()
    params = RBCParams(Ra, Pr, form.rstrip(b"\0").decode())
    return RBCFields(grid, arrays["zeta"], arrays["theta"]), t, params
