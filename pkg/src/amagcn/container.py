"""Binary array container: a JSON header followed by raw little-endian float64 data.

Layout::

    8 bytes   magic  b"AMAGCN\\x00\\x01" (last byte is the format version)
    8 bytes   header length, unsigned little-endian
    N bytes   UTF-8 JSON header: {"arrays": [{"name", "shape"}, ...], "meta": {...}}
    ...       each array, row-major, '<f8', in header order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError

MAGIC = b"AMAGCN\x00"
VERSION = 1


def write_container(path, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes(order="C"))
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:7] != MAGIC:
        raise DataError(f"{path}: not an array container")
    if data[7] != VERSION:
        raise DataError(f"{path}: unsupported container version {data[7]}")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen])
    offset = 16 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise DataError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(data):
        raise DataError(f"{path}: trailing bytes after last array")
    return arrays, header.get("meta", {})


def is_container(path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(7) == MAGIC
