"""Netpbm images (PGM P5, PBM P4), JSON cell lists and boundary CSV."""
from __future__ import annotations

import csv
import json

import numpy as np

from .grid import BinaryMask, GridSpec, ScalarField


class FormatError(ValueError):
    pass


def _read_header(data: bytes, magic: bytes, nfields: int):
    """Parse a netpbm header; returns (fields, offset of the raster)."""
    if not data.startswith(magic):
        raise FormatError(f"expected magic {magic!r}")
    pos = len(magic)
    fields = []
    while len(fields) < nfields:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise FormatError("truncated header")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise FormatError(f"malformed header token {data[start:pos]!r}") from None
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("missing whitespace after header")
    return fields, pos + 1


def _to_grid(arr: np.ndarray, grid: GridSpec | None) -> ScalarField:
    if arr.shape[0] != arr.shape[1]:
        raise FormatError(f"only square images are supported, got {arr.shape}")
    if grid is None:
        grid = GridSpec.periodic(2, arr.shape[0])
    elif grid.shape != arr.shape:
        raise FormatError(f"image of shape {arr.shape} does not match grid {grid.shape}")
    return ScalarField(grid, arr)


def read_pgm(path, grid: GridSpec | None = None) -> ScalarField:
    """Read a binary PGM, mapping ``0..maxval`` affinely onto ``[0, 1]``."""
    with open(path, "rb") as fh:
        data = fh.read()
    (width, height, maxval), off = _read_header(data, b"P5", 3)
    if not 0 < maxval < 65536:
        raise FormatError(f"bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(data) - off < need:
        raise FormatError("truncated raster")
    raw = np.frombuffer(data, dtype=dtype, count=width * height, offset=off)
    arr = raw.reshape(height, width).astype(float) / maxval
    return _to_grid(arr, grid)


def write_pgm(u: ScalarField, path, bits: int = 8):
    """Write ``u`` (clipped to [0, 1]) as an 8- or 16-bit binary PGM."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    if u.grid.dim != 2:
        raise ValueError("PGM output needs a 2-d field")
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(u.values, 0.0, 1.0) * maxval)
    dtype = ">u2" if bits == 16 else "u1"
    height, width = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        fh.write(q.astype(dtype).tobytes())


def quantize(u: ScalarField, bits: int = 8) -> ScalarField:
    maxval = 2 ** bits - 1
    return u.replace(np.rint(np.clip(u.values, 0, 1) * maxval) / maxval)


def read_pbm(path, grid: GridSpec | None = None) -> BinaryMask:
    """Read a binary PBM (P4); black pixels (bit 1) are members."""
    with open(path, "rb") as fh:
        data = fh.read()
    (width, height), off = _read_header(data, b"P4", 2)
    row_bytes = (width + 7) // 8
    if len(data) - off < row_bytes * height:
        raise FormatError("truncated raster")
    raw = np.frombuffer(data, dtype=np.uint8, count=row_bytes * height, offset=off)
    bits = np.unpackbits(raw.reshape(height, row_bytes), axis=1)[:, :width].astype(bool)
    if grid is None:
        if width != height:
            raise FormatError("only square masks are supported")
        grid = GridSpec.periodic(2, width)
    elif grid.shape != bits.shape:
        raise FormatError(f"mask of shape {bits.shape} does not match grid {grid.shape}")
    return BinaryMask(grid, bits)


def write_pbm(m: BinaryMask, path):
    height, width = m.members.shape
    packed = np.packbits(m.members.astype(np.uint8), axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P4\n{width} {height}\n".encode("ascii"))
        fh.write(packed.tobytes())


def mask_to_json(m: BinaryMask) -> str:
    cells = np.argwhere(m.members).tolist()
    return json.dumps({"shape": list(m.members.shape), "cells": cells})


def mask_from_json(text: str, grid: GridSpec | None = None) -> BinaryMask:
    obj = json.loads(text)
    shape = tuple(obj["shape"])
    members = np.zeros(shape, dtype=bool)
    cells = np.asarray(obj["cells"], dtype=int).reshape(-1, len(shape))
    if cells.size and ((cells < 0).any() or (cells >= np.array(shape)).any()):
        raise FormatError("cell index outside the mask shape")
    members[tuple(cells.T)] = True
    if grid is None:
        grid = GridSpec.periodic(len(shape), shape[0])
    elif grid.shape != shape:
        raise FormatError(f"mask of shape {shape} does not match grid {grid.shape}")
    return BinaryMask(grid, members)


def write_boundary_csv(boundary, path):
    """Write the points of a BoundarySet as ``x,y`` rows."""
    names = ["x", "y", "z"][: boundary.points.shape[1]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for p in boundary.points:
            w.writerow([repr(float(c)) for c in p])
