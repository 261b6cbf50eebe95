"""Length-prefixed tensor container.

Layout (all little-endian)::

    u64            header length N
    N bytes        UTF-8 JSON header, space-padded to a multiple of 8
    payload        raw tensor bytes, back to back

The header maps tensor names to ``{"dtype", "shape", "data_offsets"}``
(offsets relative to the payload start) plus an optional
``"__metadata__"`` string map.  This is the safetensors layout restricted
to the dtypes below, so files are readable by safetensors tooling.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Mapping, Optional

import numpy as np

DTYPES = {
    "F32": np.dtype("<f4"),
    "F64": np.dtype("<f8"),
    "I32": np.dtype("<i4"),
    "I64": np.dtype("<i8"),
}
META_KEY = "__metadata__"
MAX_HEADER = 100 * 1024 * 1024


class TensorFileError(ValueError):
    """Malformed or unreadable tensor file."""


def _dtype_name(arr: np.ndarray, name: str) -> str:
    for key, dt in DTYPES.items():
        if arr.dtype.kind == dt.kind and arr.dtype.itemsize == dt.itemsize:
            return key
    raise TensorFileError(f"tensor {name!r}: unsupported dtype {arr.dtype}")


def dumps(tensors: Mapping[str, np.ndarray], metadata: Optional[Mapping[str, str]] = None) -> bytes:
    header = {}
    chunks = []
    offset = 0
    for name in sorted(tensors):
        if name == META_KEY:
            raise TensorFileError(f"reserved tensor name {META_KEY!r}")
        arr = np.asarray(tensors[name])
        dtype = _dtype_name(arr, name)
        raw = np.ascontiguousarray(arr, dtype=DTYPES[dtype]).tobytes()
        header[name] = {"dtype": dtype, "shape": list(arr.shape), "data_offsets": [offset, offset + len(raw)]}
        chunks.append(raw)
        offset += len(raw)
    if metadata:
        header[META_KEY] = {str(k): str(v) for k, v in metadata.items()}
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    text += b" " * (-len(text) % 8)
    return struct.pack("<Q", len(text)) + text + b"".join(chunks)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if len(data) < 8:
        raise TensorFileError("file too short for header length prefix")
    (n,) = struct.unpack("<Q", data[:8])
    if n > MAX_HEADER or 8 + n > len(data):
        raise TensorFileError(f"header length {n} exceeds file size {len(data)}")
    try:
        header = json.loads(data[8 : 8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TensorFileError(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise TensorFileError("header must be a JSON object")

    payload = memoryview(data)[8 + n :]
    metadata = header.pop(META_KEY, {}) or {}
    if not isinstance(metadata, dict):
        raise TensorFileError(f"{META_KEY} must be an object")

    tensors = {}
    spans = []
    for name, info in header.items():
        try:
            dtype = DTYPES[info["dtype"]]
            shape = tuple(int(d) for d in info["shape"])
            begin, end = (int(o) for o in info["data_offsets"])
        except KeyError as exc:
            raise TensorFileError(f"tensor {name!r}: missing or unknown field {exc}") from None
        except (TypeError, ValueError):
            raise TensorFileError(f"tensor {name!r}: malformed entry") from None
        if any(d < 0 for d in shape):
            raise TensorFileError(f"tensor {name!r}: negative dimension in {shape}")
        if not 0 <= begin <= end <= len(payload):
            raise TensorFileError(f"tensor {name!r}: offsets [{begin}, {end}) out of bounds")
        if end - begin != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise TensorFileError(f"tensor {name!r}: byte size does not match shape {shape}")
        spans.append((begin, end, name))
        tensors[name] = np.frombuffer(payload[begin:end], dtype=dtype).reshape(shape).copy()

    spans.sort()
    for (b0, e0, n0), (b1, e1, n1) in zip(spans, spans[1:]):
        if b1 < e0:
            raise TensorFileError(f"tensors {n0!r} and {n1!r} overlap")
    return tensors, {str(k): str(v) for k, v in metadata.items()}


def save(path, tensors: Mapping[str, np.ndarray], metadata: Optional[Mapping[str, str]] = None) -> None:
    data = dumps(tensors, metadata)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise TensorFileError(f"cannot read {os.fspath(path)}: {exc.strerror}") from None
    return loads(data)
