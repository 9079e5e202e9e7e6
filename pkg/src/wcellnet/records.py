"""Little-endian container shared by model checkpoints and VGG weight files.

Layout::

    b"WCNC" | u16 version | u16 flags | u32 k, IF, B, h, w | u32 n_records
    n_records x { u16 name_len | utf-8 name | u8 rank | u32 dims[rank] | f32 data }
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"WCNC"
VERSION = 1
_HEADER = struct.Struct("<4sHH5I")


@dataclass
class RecordFile:
    flags: int = 0
    config: tuple[int, int, int, int, int] = (0, 0, 0, 0, 0)
    records: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)


def encode(rf: RecordFile) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, rf.flags, *rf.config), struct.pack("<I", len(rf.records))]
    for name, arr in rf.records.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode(buf: bytes) -> RecordFile:
    if len(buf) < _HEADER.size + 4:
        raise FormatError("file too short for header")
    magic, version, flags, *config = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    pos = _HEADER.size
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    records: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            if pos + nlen > len(buf):
                raise FormatError("truncated record name")
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            nbytes = 4 * int(np.prod(dims, dtype=np.int64))
            if pos + nbytes > len(buf):
                raise FormatError(f"truncated data for record {name!r}")
            records[name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims).astype(np.float32)
            pos += nbytes
    except struct.error as exc:
        raise FormatError(f"truncated file: {exc}") from None
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last record")
    return RecordFile(flags=flags, config=tuple(config), records=records)


def write(path, rf: RecordFile) -> None:
    Path(path).write_bytes(encode(rf))


def read(path) -> RecordFile:
    return decode(Path(path).read_bytes())
