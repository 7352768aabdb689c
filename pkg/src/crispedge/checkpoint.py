"""Flat binary checkpoint container.

Layout, all integers little-endian::

    magic   4 bytes  b"CEDG"
    version 1 byte   (1)
    count   uint32   number of records
    record  repeated ``count`` times:
        name_len uint16, name utf-8 bytes,
        ndim uint8, dims uint32 * ndim,
        data float64 little-endian, C order
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

MAGIC = b"CEDG"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path: Union[str, Path], arrays: Mapping[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<BI", VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8").copy(order="C")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(buf) < 9:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    version, count = struct.unpack_from("<BI", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 9
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape)
            off += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    if off != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - off} trailing bytes after the last record")
    return out
