"""LFTD binary tensor dumps.

Layout: ``b"LFTD"``, u32 rank, rank x u32 extents, then float32 values in
row-major order.  Every integer and float is little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"LFTD"


class LFTDFormatError(ValueError):
    pass


def encode(array) -> bytes:
    arr = np.asarray(array)
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_from(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one record starting at ``offset``; returns the array and the next offset."""
    if buf[offset:offset + 4] != MAGIC:
        raise LFTDFormatError(f"bad magic at byte {offset}")
    if len(buf) < offset + 8:
        raise LFTDFormatError(f"truncated rank at byte {offset + 4}")
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    pos = offset + 8
    if len(buf) < pos + 4 * rank:
        raise LFTDFormatError(f"truncated extents at byte {pos}")
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    end = pos + 4 * count
    if len(buf) < end:
        raise LFTDFormatError(f"truncated payload at byte {len(buf)}, expected {end}")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
    return arr.astype(np.float32), end


def write(path, array) -> None:
    Path(path).write_bytes(encode(array))


def read(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_from(buf)
    if end != len(buf):
        raise LFTDFormatError(f"trailing bytes after record end at byte {end}")
    return arr


def write_stream(fh: BinaryIO, array) -> int:
    data = encode(array)
    fh.write(data)
    return len(data)
