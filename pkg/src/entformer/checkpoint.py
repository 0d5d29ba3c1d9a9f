"""Binary checkpoints.

Layout: magic ``LUKE`` | version u32 LE | header length u64 LE | UTF-8 JSON
header | one contiguous little-endian payload.  The header's ``tensors`` map
gives each array's shape, dtype, and byte offset into the payload; ``config``
embeds the run configuration for provenance and ``meta`` carries the step
counter, optimizer bookkeeping, and the model configuration.  Saves are
atomic (temp file + rename) and round-trip byte-identically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ._io import write_atomic
from .errors import CheckpointError
from .model.config import ModelConfig
from .model.params import ModelParams
from .numerics import Tensor

MAGIC = b"LUKE"
VERSION = 1

_DTYPE_CODES = {"float32": "f32", "float64": "f64"}
_CODE_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def _payload_dtype(arr: np.ndarray) -> np.dtype:
    code = _DTYPE_CODES.get(arr.dtype.name)
    if code is None:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype}")
    return _CODE_DTYPES[code]


def serialize(arrays: dict[str, np.ndarray], config: dict, meta: dict) -> bytes:
    tensors = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        out_dtype = _payload_dtype(arr)
        raw = arr.astype(out_dtype, copy=False).tobytes()
        tensors[name] = {
            "shape": list(arr.shape),
            "dtype": _DTYPE_CODES[arr.dtype.name],
            "offset": offset,
        }
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"tensors": tensors, "config": config, "meta": meta},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    parts = [
        MAGIC,
        np.array(VERSION, dtype="<u4").tobytes(),
        np.array(len(header), dtype="<u8").tobytes(),
        header,
    ]
    return b"".join(parts) + b"".join(chunks)


def deserialize(blob: bytes) -> tuple[dict[str, np.ndarray], dict, dict]:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic bytes {blob[:4]!r}")
    version = int(np.frombuffer(blob, dtype="<u4", count=1, offset=4)[0])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header_len = int(np.frombuffer(blob, dtype="<u8", count=1, offset=8)[0])
    header_start = 16
    payload_start = header_start + header_len
    try:
        header = json.loads(blob[header_start:payload_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    arrays = {}
    for name, entry in header["tensors"].items():
        dtype = _CODE_DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = payload_start + entry["offset"]
        data = np.frombuffer(blob, dtype=dtype, count=count, offset=start)
        arrays[name] = data.reshape(shape).astype(dtype.newbyteorder("="))
    return arrays, header.get("config", {}), header.get("meta", {})


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    run_config: dict,
    meta: dict | None = None,
    optimizer_arrays: dict[str, np.ndarray] | None = None,
) -> None:
    meta = dict(meta or {})
    meta["model_config"] = params.config.to_dict()
    arrays = {name: t.data for name, t in params.tensors.items()}
    if optimizer_arrays:
        overlap = set(arrays) & set(optimizer_arrays)
        if overlap:
            raise CheckpointError(f"optimizer arrays collide with parameters: {sorted(overlap)}")
        arrays.update(optimizer_arrays)
    write_atomic(path, serialize(arrays, run_config, meta))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict, dict, dict[str, np.ndarray]]:
    """Returns (params, run_config, meta, optimizer_arrays)."""
    blob = Path(path).read_bytes()
    arrays, run_config, meta = deserialize(blob)
    if "model_config" not in meta:
        raise CheckpointError("checkpoint header is missing the model configuration")
    config = ModelConfig.from_dict(meta["model_config"])
    tensors = {}
    optimizer_arrays = {}
    for name, arr in arrays.items():
        if name.startswith("opt."):
            optimizer_arrays[name] = arr
        else:
            tensors[name] = Tensor(arr, name=name)
    params = ModelParams(config, tensors)
    return params, run_config, meta, optimizer_arrays
