#!/usr/bin/env python3
"""Copy a safetensors file into the uqinit container, upcasting F16/BF16 to F32.

Only the standard library and numpy are used, so the safetensors package is
not required.

    python scripts/convert_safetensors.py model.safetensors weights.bin [--only NAME ...]
"""

import argparse
import json
import struct
import sys

import numpy as np

from uqinit import tensorfile

NATIVE = {"F32": "<f4", "F64": "<f8", "I32": "<i4", "I64": "<i8", "F16": "<f2"}


def _bf16_to_f32(raw: bytes) -> np.ndarray:
    # bfloat16 is the top half of a binary32 word
    bits = np.frombuffer(raw, dtype="<u2").astype(np.uint32) << 16
    return bits.view(np.float32)


def convert(src, dst, only=None):
    with open(src, "rb") as f:
        data = f.read()
    (n,) = struct.unpack("<Q", data[:8])
    header = json.loads(data[8 : 8 + n])
    metadata = header.pop("__metadata__", None)
    payload = memoryview(data)[8 + n :]

    tensors = {}
    for name, info in header.items():
        if only and name not in only:
            continue
        begin, end = info["data_offsets"]
        raw = payload[begin:end]
        dtype = info["dtype"]
        if dtype == "BF16":
            arr = _bf16_to_f32(raw)
        elif dtype in NATIVE:
            arr = np.frombuffer(raw, dtype=NATIVE[dtype])
        else:
            raise SystemExit(f"tensor {name!r}: unsupported dtype {dtype}")
        if dtype in ("F16", "BF16"):
            arr = arr.astype(np.float32)
        tensors[name] = arr.reshape(info["shape"])
    tensorfile.save(dst, tensors, metadata)
    return sorted(tensors)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--only", nargs="*", help="tensor names to keep (default: all)")
    args = p.parse_args(argv)
    for name in convert(args.src, args.dst, set(args.only or ())):
        print(name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
