"""Little-endian raw array files.

All bundle arrays are headerless; the element type is fixed per file kind
and shapes come from the accompanying manifest.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

F32 = np.dtype("<f4")
F64 = np.dtype("<f8")
I64 = np.dtype("<i8")
U8 = np.dtype("u1")


class BundleFileError(ValueError):
    """Base class for problems with on-disk bundle contents."""


class MissingFileError(BundleFileError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"missing file: {self.path}")


class CorruptFileError(BundleFileError):
    def __init__(self, path, expected, actual, what="bytes"):
        self.path = str(path)
        self.expected = expected
        self.actual = actual
        super().__init__(f"corrupt file {self.path}: expected {expected} {what}, got {actual} bytes")


def read_raw(path, dtype, *, count=None, multiple_of=None) -> np.ndarray:
    """Read a headerless array, checking its byte length.

    ``count`` pins the exact number of elements; ``multiple_of`` only checks
    that the element count divides evenly (e.g. 3 for xyz points).
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path)
    dtype = np.dtype(dtype)
    data = path.read_bytes()
    if count is not None:
        expected = count * dtype.itemsize
        if len(data) != expected:
            raise CorruptFileError(path, expected, len(data))
    elif multiple_of is not None:
        unit = multiple_of * dtype.itemsize
        if len(data) % unit:
            raise CorruptFileError(path, f"a multiple of {unit}", len(data))
    elif len(data) % dtype.itemsize:
        raise CorruptFileError(path, f"a multiple of {dtype.itemsize}", len(data))
    return np.frombuffer(data, dtype=dtype).copy()


def write_raw(path, array, dtype) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(np.asarray(array).astype(dtype, copy=False))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(arr.tobytes(order="C"))
    os.replace(tmp, path)
