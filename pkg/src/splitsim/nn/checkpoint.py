"""Flat binary parameter checkpoints.

Layout (all integers little-endian):
    magic   "PSLW" (4 bytes)
    version u16
    count   u16              number of tensor records that follow
    record: layer u16, rank u8, dims u32 * rank, payload float64-LE * prod(dims)

A layer with weight and bias emits two records sharing the layer index,
weight first; the loader rebuilds the (weight, bias) pairing from record
order within each layer.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .network import ParameterSet

MAGIC = b"PSLW"
VERSION = 1

_NAMES = ("weight", "bias")


def save_parameters(path, params: ParameterSet) -> None:
    records = list(params.arrays())
    # arrays() yields bias before weight (sorted); write weight first per layer
    ordered = []
    for i in sorted(params.tensors):
        for name in _NAMES:
            if name in params.tensors[i]:
                ordered.append((i, name, params.tensors[i][name]))
    if len(ordered) != len(records):
        raise FormatError("checkpoint supports only weight/bias tensors per layer")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HH", VERSION, len(ordered)))
        for layer, _, arr in ordered:
            fh.write(struct.pack("<HB", layer, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_parameters(path) -> ParameterSet:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not a PSLW checkpoint")
    version, count = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 8
    tensors: dict[int, dict[str, np.ndarray]] = {}
    for _ in range(count):
        if offset + 3 > len(data):
            raise FormatError(f"{path}: truncated record header")
        layer, rank = struct.unpack_from("<HB", data, offset)
        offset += 3
        if offset + 4 * rank > len(data):
            raise FormatError(f"{path}: truncated dims")
        dims = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        if offset + 8 * n > len(data):
            raise FormatError(f"{path}: truncated payload")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(dims).copy()
        offset += 8 * n
        slot = tensors.setdefault(layer, {})
        slot["weight" if "weight" not in slot else "bias"] = arr
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes")
    return ParameterSet(tensors)
