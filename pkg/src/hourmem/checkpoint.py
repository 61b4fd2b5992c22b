"""Named parameter checkpoints.

Layout, all integers little-endian::

    b"HCKP"  u32 version (=1)  u32 count
    count x {
        u16 name_len  name (utf-8)
        u8 dtype      (1 = f32, 2 = f64)
        u8 ndim       u32 dims[ndim]
        data          little-endian, row-major
    }
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

from .errors import IntegrityError
from .tensor import Param

MAGIC = b"HCKP"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def save_params(path, params: Iterable[Param]) -> None:
    params = list(params)
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise IntegrityError("parameter names must be unique")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            code = _CODES.get(p.data.dtype)
            if code is None:
                raise IntegrityError(f"{p.name}: unsupported dtype {p.data.dtype}")
            fh.write(struct.pack("<H", len(name)) + name)
            fh.write(struct.pack("<BB", code, p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype=_DTYPES[code]).tobytes())


def read_params(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise IntegrityError("not a parameter checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version}")
    off = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + n].decode("utf-8")
            off += n
            code, ndim = struct.unpack_from("<BB", buf, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            dtype = _DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if off + size > len(buf):
                raise IntegrityError(f"{name}: truncated data")
            out[name] = np.frombuffer(buf, dtype, count=size // dtype.itemsize, offset=off).reshape(shape).copy()
            off += size
    except (struct.error, KeyError) as exc:
        raise IntegrityError(f"corrupt checkpoint: {exc}") from None
    if off != len(buf):
        raise IntegrityError("trailing bytes after last parameter")
    return out


def load_params(path, params: Iterable[Param]) -> None:
    """Copy stored values into ``params`` in place, matching by name and shape."""
    stored = read_params(path)
    for p in params:
        if p.name not in stored:
            raise IntegrityError(f"checkpoint has no parameter {p.name!r}")
        value = stored[p.name]
        if value.shape != p.data.shape:
            raise IntegrityError(f"{p.name}: stored shape {value.shape} != {p.data.shape}")
        p.data[...] = value
