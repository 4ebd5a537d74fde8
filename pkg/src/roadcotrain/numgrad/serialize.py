"""Tensor file format: one JSON header line, then little-endian float64 data.

    {"shape":[3,4,5],"dtype":"f64"}\\n<60 * 8 bytes>
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import NumgradError, Tensor


class FormatError(NumgradError):
    pass


def to_bytes(array) -> bytes:
    arr = np.asarray(array.data if isinstance(array, Tensor) else array, dtype=np.float64)
    header = json.dumps({"shape": list(arr.shape), "dtype": "f64"}, separators=(",", ":"))
    return header.encode("utf-8") + b"\n" + arr.astype("<f8").tobytes(order="C")


def from_bytes(blob: bytes) -> np.ndarray:
    head, sep, payload = blob.partition(b"\n")
    if not sep:
        raise FormatError("missing header line")
    try:
        meta = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad header: {exc}") from exc
    if meta.get("dtype") != "f64":
        raise FormatError(f"unsupported dtype {meta.get('dtype')!r}")
    shape = tuple(int(d) for d in meta.get("shape", []))
    count = int(np.prod(shape)) if shape else 1
    if len(payload) != 8 * count:
        raise FormatError(f"payload has {len(payload)} bytes, shape {list(shape)} needs {8 * count}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def save(path, array) -> None:
    Path(path).write_bytes(to_bytes(array))


def load(path) -> np.ndarray:
    return from_bytes(Path(path).read_bytes())


def load_tensor(path, requires_grad: bool = False) -> Tensor:
    return Tensor(load(path), requires_grad=requires_grad)
