"""CAKE1 raw arrays, 16-bit PGM export, and plain-text sidecars.

CAKE1 layout: the five magic bytes ``CAKE1``, a little-endian ``u32`` rank,
``rank`` little-endian ``u32`` dimensions, then the float64 little-endian
payload in row-major order (frames outermost for video).
"""

from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .core import ShapeError

MAGIC = b"CAKE1"


def write_cake1(path, array):
    a = np.ascontiguousarray(np.asarray(array, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(a.tobytes(order="C"))


def read_cake1(path):
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise ShapeError(f"{path}: not a CAKE1 file")
    (rank,) = struct.unpack_from("<I", data, 5)
    dims = struct.unpack_from(f"<{rank}I", data, 9)
    offset = 9 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(data) - offset != 8 * count:
        raise ShapeError(f"{path}: payload size does not match header dims {dims}")
    return np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(dims).astype(np.float64)


def write_sidecar(path, fields):
    """Write ``key = value`` lines; order follows ``fields``."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in fields.items():
            fh.write(f"{key} = {value}\n")


def read_sidecar(path):
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def write_pgm16(path, image):
    """Write a binary 16-bit PGM, linearly rescaled; min/max go to ``<path>.txt``."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError("PGM export needs a 2-D image")
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo if hi > lo else 1.0
    q = np.round((img - lo) / span * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())
    write_sidecar(str(path) + ".txt", {"min": repr(lo), "max": repr(hi)})


def read_pgm16(path):
    """Read a file written by :func:`write_pgm16`, undoing the rescale."""
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ShapeError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    raw = np.frombuffer(data, dtype=">u2", count=w * h, offset=m.end()).reshape(h, w).astype(np.float64)
    side = read_sidecar(str(path) + ".txt")
    lo, hi = float(side["min"]), float(side["max"])
    span = hi - lo if hi > lo else 1.0
    return lo + raw / maxval * span
