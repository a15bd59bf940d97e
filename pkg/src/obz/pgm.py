"""Minimal PGM (P2/P5) reader and writer for the CLI.

8-bit and 16-bit grayscale only; 16-bit binary samples are big-endian per
the netpbm convention. Kept dependency-free on purpose.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput


def read_pgm(data: bytes) -> np.ndarray:
    """Parse PGM bytes into a (H, W) float64 array of raw intensity values."""
    if data[:2] not in (b"P2", b"P5"):
        raise InvalidInput(f"not a PGM file (magic {data[:2]!r})")
    binary = data[:2] == b"P5"

    # tokenize header: magic, width, height, maxval; '#' starts a comment
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3 and pos < len(data):
        ch = data[pos : pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    if len(tokens) < 3:
        raise InvalidInput("truncated PGM header")
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise InvalidInput(f"bad PGM header: {exc}") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise InvalidInput(f"bad PGM dimensions {width}x{height} maxval={maxval}")

    if binary:
        pos += 1  # single whitespace after maxval
        dtype = ">u2" if maxval > 255 else np.uint8
        count = width * height
        item = 2 if maxval > 255 else 1
        if len(data) - pos < count * item:
            raise InvalidInput("truncated PGM pixel data")
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
        pixels = raw.astype(np.float64)
    else:
        try:
            values = [int(t) for t in data[pos:].split()]
        except ValueError as exc:
            raise InvalidInput(f"bad ASCII PGM pixel: {exc}") from exc
        if len(values) != width * height:
            raise InvalidInput(
                f"expected {width * height} pixels, got {len(values)}"
            )
        pixels = np.asarray(values, dtype=np.float64)
    if pixels.max(initial=0) > maxval:
        raise InvalidInput("pixel value exceeds declared maxval")
    return pixels.reshape(height, width)


def write_pgm(pixels: np.ndarray, maxval: int = 255) -> bytes:
    """Encode an integer-valued array as binary PGM (P5)."""
    px = np.asarray(pixels)
    if px.ndim != 2:
        raise InvalidInput("PGM output requires a 2-D array")
    if not 0 < maxval < 65536:
        raise InvalidInput("maxval must be in 1..65535")
    header = f"P5\n{px.shape[1]} {px.shape[0]}\n{maxval}\n".encode()
    dtype = ">u2" if maxval > 255 else np.uint8
    return header + np.clip(np.rint(px), 0, maxval).astype(dtype).tobytes()
