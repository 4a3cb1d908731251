"""Checkpoint files: magic line, JSON header line, raw little-endian float64 payload.

Layout::

    CRLKIT-CKPT v1\\n
    {"params": [{"name", "shape", "trainable", "offset"}...], "meta": {...}}\\n
    <payload: concatenated '<f8' arrays in header order>
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .params import ParamSet

MAGIC = b"CRLKIT-CKPT v1\n"


class CheckpointError(ValueError):
    pass


def dumps(params: ParamSet, meta: Optional[Dict[str, Any]] = None) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape),
                        "trainable": bool(t.requires_grad), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({"params": entries, "meta": meta or {}}, sort_keys=True)
    return MAGIC + header.encode() + b"\n" + b"".join(chunks)


def loads(blob: bytes) -> Tuple[ParamSet, Dict[str, Any]]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a crlkit checkpoint (bad magic)")
    rest = blob[len(MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise CheckpointError("truncated header")
    header = json.loads(rest[:nl].decode())
    payload = np.frombuffer(rest[nl + 1:], dtype="<f8")
    ps = ParamSet()
    for e in header["params"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        start = e["offset"]
        if start + n > payload.size:
            raise CheckpointError(f"payload too short for {e['name']}")
        arr = payload[start:start + n].reshape(e["shape"]).astype(np.float64)
        ps.add(e["name"], arr, trainable=e["trainable"])
    return ps, header.get("meta", {})


def save(path: Union[str, Path], params: ParamSet, meta: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(params, meta))
    return path


def load(path: Union[str, Path]) -> Tuple[ParamSet, Dict[str, Any]]:
    return loads(Path(path).read_bytes())
