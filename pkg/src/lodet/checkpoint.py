"""LDCK tensor container.

Layout (all integers little-endian)::

    b"LDCK" | u32 version | u32 count | count x record
    record = u32 name_len | utf-8 name | u32 rank | rank x u64 dim | f32 payload

Records whose name starts with ``__meta__/`` carry metadata: a scalar record
holds a number, and an empty record named ``__meta__/key=value`` holds a string.
"""
from __future__ import annotations

import io
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LDCK"
VERSION = 1
META = "__meta__/"


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict[str, float | str] | None = None) -> bytes:
    records = list(tensors.items())
    for key, val in (meta or {}).items():
        if isinstance(val, str):
            records.append((f"{META}{key}={val}", np.zeros(0, dtype=np.float32)))
        else:
            records.append((f"{META}{key}", np.asarray(val, dtype=np.float32).reshape(())))
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(records)))
    for name, arr in records:
        arr = np.require(np.asarray(arr, dtype="<f4"), requirements="C")
        if not np.isfinite(arr).all():
            raise CheckpointError(f"refusing to write non-finite values in {name!r}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, float | str]]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not an LDCK container (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported LDCK version {version}")
    off = 12
    tensors: dict[str, np.ndarray] = {}
    meta: dict[str, float | str] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", blob, off)
            off += 8 * rank
            nbytes = 4 * int(np.prod(dims, dtype=np.int64))
            if off + nbytes > len(blob):
                raise CheckpointError(f"record {name!r} truncated")
            arr = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=off)
            off += nbytes
            arr = arr.astype(np.float32).reshape(dims)
            if name.startswith(META):
                key = name[len(META):]
                if "=" in key:
                    k, v = key.split("=", 1)
                    meta[k] = v
                else:
                    meta[key] = float(arr.reshape(-1)[0])
            else:
                if name in tensors:
                    raise CheckpointError(f"duplicate record {name!r}")
                tensors[name] = arr
    except struct.error as exc:
        raise CheckpointError(f"truncated container: {exc}") from exc
    return tensors, meta


def save(path: str | os.PathLike, tensors: dict[str, np.ndarray],
         meta: dict[str, float | str] | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(tensors, meta))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, float | str]]:
    return loads(Path(path).read_bytes())
