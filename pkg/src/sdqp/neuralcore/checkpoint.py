"""Versioned binary checkpoints for parameter sets.

Layout: magic ``SDQC``, u16 format version, u32 header length, UTF-8 JSON
header, then for each parameter (in header order) the raw little-endian value
array followed by its two Adam moment arrays. The header records names,
shapes, dtype, optimizer step, RNG state, and caller metadata, so a load
restores training exactly where a save left it.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .params import ParamSet

MAGIC = b"SDQC"
FORMAT_VERSION = 1

_DTYPE_CODES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or incompatible."""


def save_checkpoint(params: ParamSet, path: str, meta: dict = None) -> None:
    dtype_name = np.dtype(params.dtype).name
    if dtype_name not in _DTYPE_CODES:
        raise CheckpointError(f"unsupported parameter dtype {dtype_name!r}")
    code = _DTYPE_CODES[dtype_name]

    names = params.names()
    header = {
        "dtype": dtype_name,
        "step": params.step,
        "rng_state": params.rng.bit_generator.state,
        "params": [{"name": n, "shape": list(params[n].data.shape)} for n in names],
        "meta": meta if meta is not None else {},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<H", FORMAT_VERSION))
            fh.write(struct.pack("<I", len(header_bytes)))
            fh.write(header_bytes)
            for name in names:
                fh.write(np.ascontiguousarray(params[name].data, dtype=code).tobytes())
                fh.write(np.ascontiguousarray(params.adam_m[name], dtype=code).tobytes())
                fh.write(np.ascontiguousarray(params.adam_v[name], dtype=code).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str):
    """Read a checkpoint, returning (ParamSet, meta dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = struct.unpack_from("<H", blob, 4)[0]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header_len = struct.unpack_from("<I", blob, 6)[0]
    header_end = 10 + header_len
    if header_end > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[10:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from exc

    dtype_name = header.get("dtype")
    if dtype_name not in _DTYPE_CODES:
        raise CheckpointError(f"{path}: unsupported dtype {dtype_name!r}")
    code = _DTYPE_CODES[dtype_name]
    itemsize = np.dtype(code).itemsize
    dtype = np.dtype(dtype_name)

    params = ParamSet(seed=0, dtype=dtype)
    params.step = int(header["step"])
    params.rng.bit_generator.state = header["rng_state"]

    offset = header_end
    for entry in header["params"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * itemsize
        arrays = []
        for _ in range(3):
            if offset + nbytes > len(blob):
                raise CheckpointError(f"{path}: truncated data for {entry['name']!r}")
            arrays.append(np.frombuffer(blob, dtype=code, count=count, offset=offset)
                          .astype(dtype).reshape(shape))
            offset += nbytes
        name = entry["name"]
        params.add(name, arrays[0])
        params.adam_m[name] = arrays[1]
        params.adam_v[name] = arrays[2]
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return params, header.get("meta", {})
