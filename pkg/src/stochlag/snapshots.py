"""Binary field snapshots.

Layout (little-endian): magic ``b"TSF1"``, ``u32 n``, ``u8 rank`` (0 scalar,
1 vector, 2 tensor), then ``2**rank * n * n`` f64 samples, component-major,
each component row-major.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .torus import TorusGrid

MAGIC = b"TSF1"
_HEADER = struct.Struct("<4sIB")


class SnapshotError(ValueError):
    pass


def encode(field: np.ndarray) -> bytes:
    field = np.asarray(field, dtype=float)
    n = field.shape[-1]
    rank = field.ndim - 2
    if rank not in (0, 1, 2) or field.shape[-2] != n or any(d != 2 for d in field.shape[:-2]):
        raise SnapshotError(f"not a torus field: shape {field.shape}")
    return _HEADER.pack(MAGIC, n, rank) + field.astype("<f8").tobytes(order="C")


def decode(data: bytes) -> tuple[TorusGrid, np.ndarray]:
    if len(data) < _HEADER.size:
        raise SnapshotError("truncated header")
    magic, n, rank = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if rank > 2:
        raise SnapshotError(f"bad rank {rank}")
    count = (2**rank) * n * n
    body = data[_HEADER.size:]
    if len(body) != 8 * count:
        raise SnapshotError(f"expected {8 * count} payload bytes, got {len(body)}")
    try:
        grid = TorusGrid(n)
    except ValueError as exc:
        raise SnapshotError(str(exc)) from None
    values = np.frombuffer(body, dtype="<f8").astype(float)
    return grid, values.reshape((2,) * rank + (n, n))


def write_snapshot(path: str | Path, field: np.ndarray) -> None:
    Path(path).write_bytes(encode(field))


def read_snapshot(path: str | Path) -> tuple[TorusGrid, np.ndarray]:
    return decode(Path(path).read_bytes())
