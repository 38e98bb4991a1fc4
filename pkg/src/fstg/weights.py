"""Binary parameter files shared by the harmonizer (FHAE) and SE-ResNet (FSRN).

Layout, all little-endian::

    magic      4 bytes
    version    u32
    hdr_len    u32
    header     hdr_len bytes of UTF-8 JSON:
               {"config": {...}, "tensors": [[name, [d0, d1, ...]], ...]}
    payload    f32 values, tensors concatenated in header order, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import IoFailure, MalformedHeader

VERSION = 1
_PREFIX = struct.Struct("<4sII")


def save_params(path: str | Path, magic: bytes, config: dict, params: dict[str, np.ndarray]) -> None:
    tensors = [[name, list(arr.shape)] for name, arr in params.items()]
    header = json.dumps({"config": config, "tensors": tensors}, sort_keys=True).encode()
    payload = b"".join(np.asarray(arr, dtype="<f4").tobytes() for arr in params.values())
    try:
        Path(path).write_bytes(_PREFIX.pack(magic, VERSION, len(header)) + header + payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_params(path: str | Path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise MalformedHeader("weights file truncated")
    got, version, hdr_len = _PREFIX.unpack_from(raw)
    if got != magic:
        raise MalformedHeader(f"expected magic {magic!r}, got {got!r}")
    if version != VERSION:
        raise MalformedHeader(f"unsupported weights version {version}")
    header = json.loads(raw[_PREFIX.size:_PREFIX.size + hdr_len])
    offset = _PREFIX.size + hdr_len
    params = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        if offset + 4 * count > len(raw):
            raise MalformedHeader(f"payload truncated at tensor {name}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        params[name] = arr.reshape(shape).astype(np.float64)
        offset += 4 * count
    return header["config"], params
