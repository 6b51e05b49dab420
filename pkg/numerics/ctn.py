"""Reader/writer for the ``.ctn`` tensor file format.

Layout: magic ``CTN1``, one rank byte, ``rank`` little-endian uint32 dims,
then prod(dims) little-endian float32 values in row-major order.
"""
from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np

MAGIC = b"CTN1"
PathLike = Union[str, Path]


class CtnFormatError(ValueError):
    """Raised when a file is not a well-formed ``.ctn`` tensor."""
    pass


def encode_ctn(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.ndim > 255:
        raise CtnFormatError(f"rank {array.ndim} does not fit in one byte")
    header = MAGIC + bytes([array.ndim]) + np.asarray(array.shape, dtype="<u4").tobytes()
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def decode_ctn(payload: bytes, source: str = "<bytes>") -> np.ndarray:
    if payload[:4] != MAGIC:
        raise CtnFormatError(f"{source}: bad magic {payload[:4]!r}")
    if len(payload) < 5:
        raise CtnFormatError(f"{source}: truncated header")
    rank = payload[4]
    dims_end = 5 + 4 * rank
    if len(payload) < dims_end:
        raise CtnFormatError(f"{source}: truncated dims")
    dims = tuple(int(d) for d in np.frombuffer(payload[5:dims_end], dtype="<u4"))
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    body = payload[dims_end:]
    if len(body) != expected:
        raise CtnFormatError(f"{source}: expected {expected} data bytes for dims {dims}, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(dims)


def save_ctn(path: PathLike, array: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ctn(array))
    return path


def load_ctn(path: PathLike) -> np.ndarray:
    path = Path(path)
    return decode_ctn(path.read_bytes(), source=path.name)
