"""Binary PGM (P5, maxval 255) reading and writing."""

from __future__ import annotations

import numpy as np

from .image import GrayImage

_WHITESPACE = b" \t\r\n\v\f"


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next header token, skipping whitespace and '#' comment lines."""
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch in _WHITESPACE:
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            pos = n if end < 0 else end + 1
        else:
            break
    if pos >= n:
        raise ValueError("malformed PGM header: unexpected end of file")
    start = pos
    while pos < n and data[pos:pos + 1] not in _WHITESPACE:
        pos += 1
    return data[start:pos], pos


def read_pgm(path) -> GrayImage:
    """Read a binary P5 PGM with maxval 255 into a raw-scale image."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, pos = _next_token(data, 0)
    if magic != b"P5":
        raise ValueError(f"not a binary PGM (P5) file: magic {magic!r}")
    fields = []
    for _ in range(3):
        token, pos = _next_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise ValueError(f"malformed PGM header token {token!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ValueError(f"invalid PGM dimensions {width}x{height}")
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval} (only 255 is supported)")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:pos + width * height]
    if len(payload) < width * height:
        raise ValueError(
            f"truncated PGM payload: expected {width * height} bytes, "
            f"got {len(payload)}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels.astype(np.float64))


def write_pgm(img: GrayImage, path) -> None:
    """Write as P5/255: round half away from zero, then clip to [0, 255]."""
    raw = img.to_raw().pixels
    rounded = np.sign(raw) * np.floor(np.abs(raw) + 0.5)
    clipped = np.clip(rounded, 0.0, 255.0).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(clipped.tobytes())
