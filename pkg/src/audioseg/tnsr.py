"""TNSR binary tensor files, used for checkpoints and embedding dumps.

Layout: magic ``TNSR``, u8 version (1), u8 dtype (0=f32, 1=f64), u8 rank,
little-endian u64 dims[rank], then the row-major payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"TNSR"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_tnsr(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _DTYPE_CODES:
        arr = arr.astype(np.float32)
    code = _DTYPE_CODES[arr.dtype]
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    payload = arr.astype(_CODE_DTYPES[code], copy=False).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_tnsr(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 7 or blob[:4] != MAGIC:
        raise DataError(f"{path}: not a TNSR file")
    version, code, rank = struct.unpack("<BBB", blob[4:7])
    if version != VERSION:
        raise DataError(f"{path}: unsupported TNSR version {version}")
    if code not in _CODE_DTYPES:
        raise DataError(f"{path}: unknown dtype code {code}")
    offset = 7
    if len(blob) < offset + 8 * rank:
        raise DataError(f"{path}: truncated TNSR header")
    dims = struct.unpack(f"<{rank}Q", blob[offset : offset + 8 * rank]) if rank else ()
    offset += 8 * rank
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(dims)) if rank else 1
    expected = count * dtype.itemsize
    if len(blob) - offset != expected:
        raise DataError(f"{path}: payload size {len(blob) - offset}, expected {expected}")
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def save_named_arrays(directory: str | Path, named: dict[str, np.ndarray]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, arr in named.items():
        write_tnsr(d / f"{name}.tnsr", arr)


def load_named_arrays(directory: str | Path, names: list[str]) -> dict[str, np.ndarray]:
    d = Path(directory)
    out = {}
    for name in names:
        path = d / f"{name}.tnsr"
        if not path.exists():
            raise DataError(f"checkpoint is missing tensor file {path.name}")
        out[name] = read_tnsr(path)
    return out
