"""Writer for the DFTC tensor container the correspondence toolkit reads.

The format is the toolkit's interchange contract, reproduced here so the
exporter stays importable without it::

    offset 0   magic  b"DFTC"
    offset 4   version u32 (= 1)
    offset 8   dtype code u8 (0=f32, 1=f64, 2=u8, 3=i64)
    offset 9   ndim u8
    offset 10  2 zero pad bytes
    offset 12  shape, one u64 per dim
    then       raw C-order little-endian data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DFTC"
VERSION = 1

_DTYPES = {
    ("f", 4): (0, np.dtype("<f4")),
    ("f", 8): (1, np.dtype("<f8")),
    ("u", 1): (2, np.dtype("<u1")),
    ("i", 8): (3, np.dtype("<i8")),
}


class DftcError(Exception):
    pass


def write_tensor(array: np.ndarray, path: str | Path) -> None:
    """Serialize ``array`` (f32/f64/u8/i64, every dim > 0) to ``path``."""
    array = np.asarray(array)
    key = (array.dtype.kind, array.dtype.itemsize)
    if key not in _DTYPES:
        raise DftcError(f"dtype {array.dtype} not in {{f32, f64, u8, i64}}")
    if array.ndim == 0 or any(s <= 0 for s in array.shape):
        raise DftcError(f"every dimension must be positive, got {array.shape}")
    if array.ndim > 255:
        raise DftcError("ndim exceeds u8")
    code, wire = _DTYPES[key]
    data = np.ascontiguousarray(array, dtype=wire)
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<IBBxx", VERSION, code, array.ndim))
        f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        f.write(data.tobytes())
