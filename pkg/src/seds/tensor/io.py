"""SEDT binary tensor files and tensor archives.

Layout of one SEDT blob (all little-endian)::

    b"SEDT" | u8 dtype code | u8 rank | u64 dims[rank] | payload

An archive is a zip file (stored, fixed timestamps so identical content
gives identical bytes) holding one ``.sedt`` member per named tensor plus
arbitrary JSON members.
"""

from __future__ import annotations

import io
import json
import os
import struct
import zipfile
from typing import Mapping

import numpy as np

MAGIC = b"SEDT"

DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i4"): 2,
    np.dtype("<i8"): 3,
    np.dtype("u1"): 4,
}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}

_ZIP_DATE = (2000, 1, 1, 0, 0, 0)


class TensorFormatError(ValueError):
    """Raised for malformed SEDT content."""


def to_bytes(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("|",) else arr.dtype
    if dt not in DTYPE_CODES:
        raise TensorFormatError(f"dtype {arr.dtype} has no SEDT code")
    if arr.ndim > 255:
        raise TensorFormatError("rank above 255")
    header = MAGIC + struct.pack("<BB", DTYPE_CODES[dt], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=dt).tobytes()


def from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise TensorFormatError("missing SEDT magic")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in CODE_DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    off = 6 + 8 * rank
    if len(buf) < off:
        raise TensorFormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}Q", buf, 6)
    dt = CODE_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) != off + count * dt.itemsize:
        raise TensorFormatError(
            f"payload is {len(buf) - off} bytes, expected {count * dt.itemsize} for shape {dims}"
        )
    return np.frombuffer(buf, dtype=dt, count=count, offset=off).reshape(dims).copy()


def save(path, array) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(array))


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    return info


def save_archive(path, tensors: Mapping[str, np.ndarray], extras: Mapping[str, object] | None = None) -> None:
    """Write named tensors (and JSON-serialisable extras) to one file."""
    tmp = f"{path}.tmp"
    with zipfile.ZipFile(tmp, "w") as zf:
        for name in sorted(tensors):
            zf.writestr(_member(f"tensors/{name}.sedt"), to_bytes(tensors[name]))
        for key in sorted(extras or {}):
            payload = json.dumps(extras[key], sort_keys=True, indent=1)
            zf.writestr(_member(f"{key}.json"), payload.encode())
    os.replace(tmp, path)


def load_archive(path) -> tuple[dict[str, np.ndarray], dict[str, object]]:
    tensors: dict[str, np.ndarray] = {}
    extras: dict[str, object] = {}
    with zipfile.ZipFile(path) as zf:
        for name in zf.namelist():
            raw = zf.read(name)
            if name.startswith("tensors/") and name.endswith(".sedt"):
                tensors[name[len("tensors/"):-len(".sedt")]] = from_bytes(raw)
            elif name.endswith(".json"):
                extras[name[:-len(".json")]] = json.load(io.BytesIO(raw))
    return tensors, extras
