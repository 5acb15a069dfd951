"""Binary parameter checkpoints.

Format: a 16-byte header (8-byte magic, 8-byte little-endian unsigned
parameter count) followed by the flat float64 vector, little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataFormatError
from .ioutil import atomic_write_bytes

MAGIC = b"CFLW0001"
HEADER = struct.Struct("<8sQ")


def save_params(path: str, params: np.ndarray) -> None:
    params = np.ascontiguousarray(params, dtype="<f8")
    if params.ndim != 1:
        raise ValueError("params must be a flat vector")
    payload = HEADER.pack(MAGIC, params.size) + params.tobytes()
    atomic_write_bytes(path, payload)


def load_params(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise DataFormatError(f"{path}: shorter than the checkpoint header")
    magic, count = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    expected = HEADER.size + 8 * count
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for {count} parameters, got {len(raw)}"
        )
    return np.frombuffer(raw, dtype="<f8", offset=HEADER.size).astype(np.float64)
