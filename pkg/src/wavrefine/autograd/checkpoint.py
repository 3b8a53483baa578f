"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"WRCKPT1"
    u32 entry count
    per entry: u16 name length, utf-8 name, u8 dtype code, u8 ndim,
               u64 per dimension, raw little-endian values

JSON metadata (epoch counter, RNG state, config) is stored as a ``uint8``
entry named ``__meta__``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"WRCKPT1"
META_KEY = "__meta__"

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODES = {(dt.kind, dt.itemsize): code for code, dt in _DTYPES.items()}


def _code(arr: np.ndarray) -> int:
    try:
        return _CODES[(arr.dtype.kind, arr.dtype.itemsize)]
    except KeyError:
        raise TypeError(f"unsupported checkpoint dtype {arr.dtype}") from None


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    """Atomically write ``arrays`` (and optional JSON ``meta``) to ``path``."""
    entries = dict(arrays)
    if meta is not None:
        entries[META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries.items():
            arr = np.asarray(arr)
            code = _code(arr)
            raw = name.encode()
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
        f.flush()
        os.fsync(f.fileno())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + nlen].decode()
        pos += nlen
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        dt = _DTYPES[code]
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype=dt, count=n, offset=pos).reshape(shape)
        pos += n * dt.itemsize
        arrays[name] = arr.astype(dt.newbyteorder("="))
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    meta = {}
    if META_KEY in arrays:
        meta = json.loads(arrays.pop(META_KEY).tobytes().decode())
    return arrays, meta
