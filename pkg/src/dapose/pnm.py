"""Binary PGM (P5) / PPM (P6) reading and writing, maxval 255."""

from __future__ import annotations

import os
import re

import numpy as np

from .skeleton import PixelGrid

_HEADER = re.compile(rb"^(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def encode(img: PixelGrid) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + img.data.tobytes()


def decode(blob: bytes) -> PixelGrid:
    m = _HEADER.match(blob)
    if m is None:
        raise ValueError("not a binary PGM/PPM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ValueError(f"only maxval 255 is supported, got {maxval}")
    c = 1 if magic == b"P5" else 3
    body = blob[m.end() :]
    if len(body) < w * h * c:
        raise ValueError("truncated image data")
    data = np.frombuffer(body[: w * h * c], dtype=np.uint8).reshape(h, w, c)
    return PixelGrid(data.copy())


def write_pnm(img: PixelGrid, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(img))


def read_pnm(path: str | os.PathLike) -> PixelGrid:
    with open(path, "rb") as fh:
        return decode(fh.read())
