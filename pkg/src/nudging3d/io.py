"""File formats: binary velocity snapshots, JSON reports, atomic writes."""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .spectral import DomainSpec, SpectralVelocity

__all__ = [
    "SNAPSHOT_MAGIC",
    "SNAPSHOT_VERSION",
    "atomic_write_bytes",
    "atomic_write_text",
    "write_json",
    "snapshot_bytes",
    "save_snapshot",
    "load_snapshot",
]

SNAPSHOT_MAGIC = b"NSE3"
SNAPSHOT_VERSION = 1
# magic, version, N, L, nu, t  (little endian)
_HEADER = struct.Struct("<4sii3d")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, default=_default) + "\n")


def snapshot_bytes(u: SpectralVelocity, t: float = 0.0) -> bytes:
    """Binary snapshot: header then 3 complex128 blocks in FFT index order."""
    d = u.domain
    head = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, d.N, d.L, d.nu, float(t))
    return head + np.ascontiguousarray(u.coeffs, dtype="<c16").tobytes()


def save_snapshot(path, u: SpectralVelocity, t: float = 0.0) -> None:
    atomic_write_bytes(path, snapshot_bytes(u, t))


def load_snapshot(path) -> tuple[SpectralVelocity, float]:
    """Read a snapshot written by :func:`save_snapshot`; returns (u, t)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated snapshot header")
    magic, version, N, L, nu, t = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a velocity snapshot")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    expected = _HEADER.size + 3 * N**3 * 16
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    c = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape(3, N, N, N)
    d = DomainSpec(L=L, N=N, nu=nu)
    return SpectralVelocity(c.astype(complex), d), t
