"""Binary record container ("NSTW1"): named little-endian float arrays.

Layout: magic "NSTW1", then records of
    u32 name length, name (UTF-8), u8 dtype tag (0=f32, 1=f64),
    u32 rank, u32 dims[rank], raw little-endian values.
Used for network weights and for cached layer statistics.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"NSTW1"
_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_RTAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def write_records(path, records: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, arr in records.items():
            arr = np.asarray(arr)
            if arr.dtype not in _RTAGS:
                arr = arr.astype(np.float64)
            enc = name.encode("utf-8")
            f.write(struct.pack("<I", len(enc)))
            f.write(enc)
            f.write(struct.pack("<BI", _RTAGS[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def read_records(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:5] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:5]!r}, expected {MAGIC!r}")
    records: dict[str, np.ndarray] = {}
    off = 5

    def take(n, what):
        nonlocal off
        if off + n > len(data):
            raise FormatError(f"{path}: truncated while reading {what}")
        chunk = data[off:off + n]
        off += n
        return chunk

    while off < len(data):
        (nlen,) = struct.unpack("<I", take(4, "record name length"))
        name = take(nlen, "record name").decode("utf-8")
        tag, rank = struct.unpack("<BI", take(5, f"{name} header"))
        if tag not in _TAGS:
            raise FormatError(f"{path}: record {name} has unknown dtype tag {tag}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        dtype = _TAGS[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        raw = take(nbytes, f"{name} data")
        records[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    return records
