"""Binary tensor container ("MGIT" format).

Layout, all little-endian:
  magic   4 bytes  "MGIT"
  version u32      1
  dtype   u8       1 = float64
  ndim    u8
  dims    ndim * u64
  payload row-major float64 values

Round-trips are bitwise exact.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MGIT"
VERSION = 1
DTYPE_F64 = 1


class TensorIOError(ValueError):
    """Base class for container format errors."""


class BadMagicError(TensorIOError):
    pass


class UnsupportedVersionError(TensorIOError):
    pass


class UnsupportedDtypeError(TensorIOError):
    pass


class TruncatedFileError(TensorIOError):
    pass


def tensor_bytes(arr: np.ndarray) -> bytes:
    # note: np.ascontiguousarray would promote 0-d arrays to 1-d
    arr = np.asarray(arr, dtype="<f8", order="C")
    header = MAGIC + struct.pack("<IBB", VERSION, DTYPE_F64, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes()


def write_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(arr))


def tensor_from_bytes(blob: bytes) -> np.ndarray:
    if len(blob) < 10:
        raise TruncatedFileError("file shorter than the fixed header")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:4]!r}")
    version, dtype, ndim = struct.unpack("<IBB", blob[4:10])
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if dtype != DTYPE_F64:
        raise UnsupportedDtypeError(f"unsupported dtype code {dtype}")
    dims_end = 10 + 8 * ndim
    if len(blob) < dims_end:
        raise TruncatedFileError("file truncated inside the dims block")
    dims = struct.unpack(f"<{ndim}Q", blob[10:dims_end])
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expected = dims_end + 8 * count
    if len(blob) < expected:
        raise TruncatedFileError(
            f"payload truncated: expected {expected} bytes, got {len(blob)}"
        )
    arr = np.frombuffer(blob[dims_end:expected], dtype="<f8").reshape(dims)
    return arr.astype(np.float64, copy=True)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return tensor_from_bytes(fh.read())
