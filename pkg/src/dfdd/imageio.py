"""Binary PGM (P5) read/write, 8- and 16-bit."""

from __future__ import annotations

import os
import re

import numpy as np

_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s")


def write_pgm(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a 2-D unsigned image; maxval 255 for uint8, 65535 otherwise."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    if img.dtype == np.uint8:
        data, maxval = img.tobytes(), 255
    else:
        if img.min(initial=0) < 0 or img.max(initial=0) > 65535:
            raise ValueError("PGM sample out of 16-bit range")
        data, maxval = img.astype(">u2").tobytes(), 65535
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        f.write(data)


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    m = _HEADER.match(raw)
    if not m:
        raise ValueError(f"{path}: not a binary PGM file")
    w, h, maxval = (int(g) for g in m.groups())
    body = raw[m.end():]
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    n = w * h * dtype.itemsize
    if len(body) < n:
        raise ValueError(f"{path}: truncated PGM data")
    img = np.frombuffer(body[:n], dtype=dtype).reshape(h, w)
    return img.astype(np.uint8 if maxval < 256 else np.uint16)
