"""ERPF weight files.

Layout (all integers little-endian uint32)::

    b"ERPF" | version | config_len | config (UTF-8 JSON) | n_params |
    n_params x ( name_len | name | ndim | dims... | float32 LE data, row-major )
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .optim import ParameterSet

MAGIC = b"ERPF"
VERSION = 1


class WeightFormatError(ValueError):
    pass


def dumps(params: ParameterSet, config: dict) -> bytes:
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[ParameterSet, dict]:
    if blob[:4] != MAGIC:
        raise WeightFormatError(f"bad magic {blob[:4]!r}; not an ERPF weight file")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise WeightFormatError("truncated weight file")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    version, cfg_len = struct.unpack("<II", take(8))
    if version != VERSION:
        raise WeightFormatError(f"unsupported ERPF version {version}")
    config = json.loads(take(cfg_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    params = ParameterSet()
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
        params.add(name, data)
    if pos != len(blob):
        raise WeightFormatError(f"{len(blob) - pos} trailing bytes after last parameter")
    return params, config


def save(path, params: ParameterSet, config: dict) -> None:
    Path(path).write_bytes(dumps(params, config))


def load(path) -> tuple[ParameterSet, dict]:
    return loads(Path(path).read_bytes())
