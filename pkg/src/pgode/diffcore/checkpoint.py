"""Single-file tensor checkpoints.

Layout: an 8-byte little-endian header length, a UTF-8 JSON header mapping
each tensor name to shape/dtype/byte-offset (plus a free-form "meta" block),
then the concatenated little-endian float64 payload.  Names are written in
sorted order so identical contents give identical bytes.
"""

from __future__ import annotations

import json
import struct
from typing import Mapping

import numpy as np

from ..errors import ConfigurationError

_LEN_FMT = "<Q"


def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    names = sorted(tensors)
    entries = {}
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype=np.float64))
        blob = arr.astype("<f8", copy=False).tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": "<f8", "offset": offset}
        offset += len(blob)
        blobs.append(blob)
    header = json.dumps({"version": 1, "meta": meta or {}, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack(_LEN_FMT, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        raw_len = fh.read(struct.calcsize(_LEN_FMT))
        if len(raw_len) != struct.calcsize(_LEN_FMT):
            raise ConfigurationError(f"checkpoint {path}: truncated header length")
        (header_len,) = struct.unpack(_LEN_FMT, raw_len)
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    if header.get("version") != 1:
        raise ConfigurationError(f"checkpoint {path}: unsupported version")
    tensors = {}
    for name, entry in header["tensors"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype=entry["dtype"], count=count, offset=start)
        tensors[name] = arr.astype(np.float64).reshape(shape)
    return tensors, header.get("meta", {})
