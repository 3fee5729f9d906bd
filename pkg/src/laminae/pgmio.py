"""Binary PGM (P5) reading and writing.

Two flavours are used by the package: 8-bit masks (ROI codes 0..3) and
16-bit big-endian rasters (cell-id label maps, Laplace field dumps).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ParseError


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary PGM file into a (H, W) uint8 or uint16 array."""
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise ParseError(f"{path}: not a binary PGM (missing P5 magic)")

    # Header tokens: magic, width, height, maxval; '#' comments run to EOL.
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            eol = data.find(b"\n", pos)
            if eol < 0:
                raise ParseError(f"{path}: truncated header comment")
            pos = eol + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval

    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric PGM header field") from exc
    if width <= 0 or height <= 0:
        raise ParseError(f"{path}: non-positive dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise ParseError(f"{path}: maxval {maxval} out of range")

    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    raw = data[pos : pos + expected]
    if len(raw) != expected:
        raise ParseError(
            f"{path}: expected {expected} pixel bytes, found {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    return pixels.astype(np.uint16) if maxval > 255 else pixels.copy()


def write_pgm(path: str | Path, pixels: np.ndarray, maxval: int) -> None:
    """Write a (H, W) integer array as binary PGM (16-bit written big-endian)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError("PGM pixels must be a 2-D array")
    if not 0 < maxval < 65536:
        raise ValueError(f"maxval {maxval} out of range")
    if pixels.min() < 0 or pixels.max() > maxval:
        raise ValueError("pixel values outside [0, maxval]")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + pixels.astype(dtype).tobytes())
