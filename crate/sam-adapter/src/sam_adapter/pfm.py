"""Grayscale PFM, little-endian, rows stored bottom-to-top."""

from pathlib import Path

import numpy as np


def write_pfm(path: Path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {data.shape}")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    magic, w, h, scale = tokens[0], int(tokens[1]), int(tokens[2]), float(tokens[3])
    if magic != "Pf":
        raise ValueError(f"{path}: not a grayscale PFM ({magic!r})")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos + 1)
    return data.reshape(h, w)[::-1].astype(np.float32)
