"""Self-describing binary container: JSON header + named float arrays.

Used for model/train checkpoints and the mel feature cache. Writes are
atomic (temp file + rename) and canonical (sorted array names, compact
sorted-key JSON), so identical state produces identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import DataError

_MAGIC = b"PRCT"
_VERSION = 1

_DTYPES = {"<f8": "<f8", "<f4": "<f4", "<i8": "<i8"}


def _canonical_dtype(arr: np.ndarray) -> str:
    kind = arr.dtype.kind
    if kind == "f":
        return "<f8" if arr.dtype.itemsize == 8 else "<f4"
    if kind == "i":
        return "<i8"
    raise DataError(f"container: unsupported dtype {arr.dtype}")


def write_container(path: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dtype = _canonical_dtype(arr)
        arr = arr.astype(dtype, copy=False)
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-container-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _VERSION))
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read container {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != _MAGIC:
        raise DataError(f"{path}: not a container file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _VERSION:
        raise DataError(f"{path}: container version mismatch: expected {_VERSION}, found {version}")
    (header_len,) = struct.unpack_from("<Q", raw, 8)
    if 16 + header_len > len(raw):
        raise DataError(f"{path}: truncated header ({len(raw)} bytes total)")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt container header: {exc}") from exc
    offset = 16 + header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header.get("arrays", []):
        dtype = entry["dtype"]
        if dtype not in _DTYPES:
            raise DataError(f"{path}: unsupported dtype {dtype} in header")
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        if offset + nbytes > len(raw):
            raise DataError(
                f"{path}: truncated array {entry['name']!r}: need {nbytes} bytes at "
                f"offset {offset}, file has {len(raw)}"
            )
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype=dtype, count=count, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    return header.get("meta", {}), arrays
