"""Minimal little-endian container for named numeric tensors.

Layout::

    magic   4 bytes  b"XTNS"
    version u8       (1)
    count   u32
    repeated count times:
        name_len u16, name (utf-8)
        dtype    u8   (code from DTYPES)
        ndim     u8
        shape    u64 * ndim
        data     little-endian, C order

JSON metadata lives in a sidecar file next to the container.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"XTNS"
VERSION = 1
DTYPES = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("u1"),
    4: np.dtype("<i4"),
    5: np.dtype("<i8"),
    6: np.dtype("<u2"),
}
_CODES = {dt: code for code, dt in DTYPES.items()}


class ContainerError(IOError):
    pass


def write_tensors(path, tensors: dict) -> None:
    parts = [MAGIC, struct.pack("<BI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
        if dt not in _CODES:
            raise ContainerError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _CODES[dt], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_tensors(path) -> dict:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ContainerError(f"{path}: not a tensor container")
    try:
        version, count = struct.unpack_from("<BI", buf, 4)
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported container version {version}")
        off = 9
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off : off + n].decode()
            off += n
            code, ndim = struct.unpack_from("<BB", buf, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}Q", buf, off)
            off += 8 * ndim
            dt = DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if off + size > len(buf):
                raise ContainerError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype=dt, count=size // dt.itemsize, offset=off).reshape(shape).copy()
            off += size
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise ContainerError(f"{path}: malformed container ({exc})") from exc
    return out


def write_bundle(stem, tensors: dict, meta: dict) -> tuple[Path, Path]:
    """Write ``stem.bin`` plus ``stem.json``; returns both paths."""
    stem = Path(stem)
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    stem.parent.mkdir(parents=True, exist_ok=True)
    write_tensors(bin_path, tensors)
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return bin_path, json_path


def read_bundle(stem) -> tuple[dict, dict]:
    stem = Path(stem)
    tensors = read_tensors(stem.with_suffix(".bin"))
    meta_path = stem.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return tensors, meta
