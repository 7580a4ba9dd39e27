"""Raster I/O: binary PPM (P6) color, PGM (P5) masks, and float32 depth rasters.

Depth raster layout: 8-byte header of width and height as little-endian
uint32, then row-major float32 little-endian samples (mm, +inf = empty).
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

__all__ = [
    "write_ppm",
    "read_ppm",
    "write_pgm",
    "read_pgm",
    "write_depth",
    "read_depth",
    "write_cbcr",
    "read_cbcr",
]


def write_ppm(image: np.ndarray) -> bytes:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected HxWx3 uint8 image")
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


def write_pgm(mask: np.ndarray) -> bytes:
    m = np.asarray(mask)
    if m.dtype == bool:
        m = m.astype(np.uint8) * 255
    m = np.ascontiguousarray(m, dtype=np.uint8)
    h, w = m.shape
    return b"P5\n%d %d\n255\n" % (w, h) + m.tobytes()


def _read_pnm(data: bytes, magic: bytes, channels: int) -> np.ndarray:
    if not data.startswith(magic):
        raise FormatError(f"not a {magic.decode()} file")
    # header tokens may be separated by whitespace and '#' comments
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PNM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise FormatError("only maxval 255 supported")
    n = w * h * channels
    raster = data[pos : pos + n]
    if len(raster) != n:
        raise FormatError("truncated PNM raster")
    arr = np.frombuffer(raster, dtype=np.uint8)
    shape = (h, w, channels) if channels > 1 else (h, w)
    return arr.reshape(shape).copy()


def read_ppm(data: bytes) -> np.ndarray:
    return _read_pnm(data, b"P6", 3)


def read_pgm(data: bytes) -> np.ndarray:
    return _read_pnm(data, b"P5", 1)


def write_depth(depth: np.ndarray) -> bytes:
    d = np.ascontiguousarray(depth, dtype="<f4")
    h, w = d.shape
    return struct.pack("<II", w, h) + d.tobytes()


def write_cbcr(cbcr: np.ndarray) -> bytes:
    """(h, w, 2) uint8 chrominance raster; same 8-byte header as depth files."""
    d = np.ascontiguousarray(cbcr, dtype=np.uint8)
    h, w, c = d.shape
    if c != 2:
        raise ValueError("expected (h, w, 2) CbCr raster")
    return struct.pack("<II", w, h) + d.tobytes()


def read_cbcr(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise FormatError("truncated CbCr header")
    w, h = struct.unpack("<II", data[:8])
    n = w * h * 2
    if len(data) != 8 + n:
        raise FormatError("CbCr raster size mismatch")
    return np.frombuffer(data[8:], dtype=np.uint8).reshape(h, w, 2).copy()


def read_depth(data: bytes) -> np.ndarray:
    if len(data) < 8:
        raise FormatError("truncated depth header")
    w, h = struct.unpack("<II", data[:8])
    n = w * h * 4
    if len(data) != 8 + n:
        raise FormatError("depth raster size mismatch")
    return np.frombuffer(data[8:], dtype="<f4").reshape(h, w).astype(np.float32)
