"""NTSR named-tensor container.

Layout (all integers u32 little-endian)::

    "NTSR" | tensor count
    per tensor: name length | name (utf-8) | rank | dims... | float64 LE data
    metadata length | metadata (utf-8 JSON)
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import LoadError

MAGIC = b"NTSR"
_U32 = struct.Struct("<I")


def save_tensors(path, tensors: dict, metadata: dict | None = None) -> None:
    parts = [MAGIC, _U32.pack(len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float64)
        bname = name.encode("utf-8")
        parts.append(_U32.pack(len(bname)))
        parts.append(bname)
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    meta = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(_U32.pack(len(meta)))
    parts.append(meta)
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise LoadError(f"{self.path}: container truncated at byte offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def load_tensors(path) -> tuple:
    """Return ``(tensors, metadata)``."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read container {path}: {exc}") from exc
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise LoadError(f"{path}: bad magic, not an NTSR container")
    tensors = {}
    for _ in range(r.u32()):
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise LoadError(f"{path}: corrupt tensor name at byte offset {r.pos}") from exc
        rank = r.u32()
        if rank > 8:
            raise LoadError(f"{path}: implausible rank {rank} for tensor {name!r}")
        dims = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        buf = r.take(8 * count)
        tensors[name] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(dims)
    raw_meta = r.take(r.u32())
    try:
        meta = json.loads(raw_meta.decode("utf-8")) if raw_meta else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LoadError(f"{path}: corrupt metadata block") from exc
    if r.pos != len(data):
        raise LoadError(f"{path}: {len(data) - r.pos} trailing bytes after metadata")
    return tensors, meta


def require(tensors: dict, names, path="container") -> None:
    missing = [n for n in names if n not in tensors]
    if missing:
        raise LoadError(f"{path}: missing tensor(s) {', '.join(missing)}")
