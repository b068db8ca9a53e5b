"""Binary containers for parameter checkpoints and windowed datasets.

Both formats are little-endian: a 4-byte magic, one version byte, a uint32
record count, then the records.

checkpoint record:  u16 name length, name (utf-8), u8 ndim, ndim x u32 dims,
                    float64 payload
dataset record:     u16 id length, id (utf-8), u64 start sample, u32 length,
                    u16 class count, float64 x[length], int32 labels[length]
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .signals import WindowedExample

CKPT_MAGIC = b"RSCK"
DATA_MAGIC = b"RSWD"
VERSION = 1


def _header(magic: bytes, n: int) -> bytes:
    return magic + struct.pack("<BI", VERSION, n)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError(f"{self.path}: truncated file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def header(self, magic: bytes) -> int:
        if self.take(4) != magic:
            raise DataError(f"{self.path}: bad magic, not a {magic.decode()} file")
        version, n = self.unpack("<BI")
        if version != VERSION:
            raise DataError(f"{self.path}: unsupported version {version}")
        return n


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def save_params(params: dict, path):
    parts = [_header(CKPT_MAGIC, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_params(path) -> dict[str, np.ndarray]:
    r = _Reader(_read(path), path)
    params = {}
    for _ in range(r.header(CKPT_MAGIC)):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    return params


def save_dataset(examples, path):
    parts = [_header(DATA_MAGIC, len(examples))]
    for ex in examples:
        rid = ex.source[0].encode()
        L = len(ex.x)
        parts.append(struct.pack("<H", len(rid)) + rid)
        parts.append(struct.pack("<QIH", int(ex.source[1]), L, ex.num_classes))
        parts.append(np.asarray(ex.x, dtype="<f8").tobytes())
        parts.append(np.asarray(ex.labels, dtype="<i4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_dataset(path) -> list[WindowedExample]:
    r = _Reader(_read(path), path)
    out = []
    for _ in range(r.header(DATA_MAGIC)):
        (nlen,) = r.unpack("<H")
        rid = r.take(nlen).decode()
        start, L, C = r.unpack("<QIH")
        x = np.frombuffer(r.take(8 * L), dtype="<f8").astype(np.float64)
        labels = np.frombuffer(r.take(4 * L), dtype="<i4").astype(np.int64)
        out.append(WindowedExample(x, labels, C, (rid, start)))
    return out
