"""Binary PPM (P6) images, 8 bits per channel, mapped to float32 in [0, 1]."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def write_ppm(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape[:2]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.reshape(h, w, 3).tobytes())


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a P6 file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported")
    pos += 1
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return (data.reshape(h, w, 3).astype(np.float32) / 255.0)
