"""8-bit PGM previews and exact raw float64 images with a JSON header."""
from __future__ import annotations

import json
import os

import numpy as np

__all__ = ["write_pgm", "read_pgm", "write_raw", "read_raw", "read_image"]


def write_pgm(path: str, img: np.ndarray) -> dict:
    """Write a binary (P5) PGM, min-max scaled to 0..255.

    Returns the scaling ``{"min": lo, "max": hi}`` so callers can record it.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo
    scaled = np.zeros(img.shape) if span == 0 else (img - lo) / span * 255.0
    data = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
    return {"min": lo, "max": hi}


def _tokens(buf: bytes, count: int, pos: int = 0):
    out = []
    while len(out) < count:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while not buf[pos:pos + 1].isspace():
            pos += 1
        out.append(buf[start:pos])
    return out, pos + 1


def read_pgm(path: str) -> np.ndarray:
    """Read a P5 or P2 PGM as a float array of raw gray levels."""
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, w, h, maxval), pos = _tokens(buf, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if magic == b"P5":
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        data = np.frombuffer(buf, dtype=dtype, count=w * h, offset=pos)
    elif magic == b"P2":
        data = np.array(buf[pos:].split()[: w * h], dtype=np.int64)
    else:
        raise ValueError(f"{path}: not a PGM file")
    return data.reshape(h, w).astype(np.float64)


def write_raw(path: str, arr: np.ndarray, **header) -> str:
    """Write ``arr`` as little-endian float64 to ``path`` plus ``path + '.json'``."""
    arr = np.asarray(arr, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(arr).tobytes(order="C"))
    meta = {"dims": list(arr.shape), "dtype": "float64", "byte_order": "little", "order": "C"}
    meta.update(header)
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path + ".json"


def read_raw(path: str) -> np.ndarray:
    with open(path + ".json") as fh:
        meta = json.load(fh)
    data = np.fromfile(path, dtype="<f8")
    return data.reshape(meta["dims"])


def read_image(path: str) -> np.ndarray:
    """PGM by extension, otherwise raw float64 with a JSON header."""
    if path.lower().endswith(".pgm"):
        return read_pgm(path)
    if os.path.exists(path + ".json"):
        return read_raw(path)
    raise ValueError(f"cannot tell the format of {path}")
