"""DPFT feature-file writer and reader.

The format is a 20-byte little-endian header followed by the payload:

    offset  size  field
    0       4     magic ``b"DPFT"``
    4       2     format version, currently 1
    6       1     dtype code, 1 = float32
    7       1     flags, bit 0 set when every row is unit L2 norm
    8       4     dim (columns)
    12      8     count (rows)

Rows are stored row-major as little-endian float32. Label files carry no
header at all: a bare sequence of little-endian int32 values.

This module is self-contained on purpose. The extractor talks to the
detection engine only through files, so the two codebases share a format,
not an import.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DPFT"
VERSION = 1
DTYPE_F32 = 1
FLAG_NORMALIZED = 0x01

_HEADER = struct.Struct("<4sHBBIQ")


class FormatError(ValueError):
    """Raised when a file does not decode as valid DPFT or label data."""


def write_features(path, matrix, normalized):
    """Write a 2-D float array as a DPFT file.

    ``normalized`` is an assertion by the caller, recorded in the header
    flags; rows are written as given, never rescaled here.
    """
    arr = np.ascontiguousarray(matrix, dtype=np.float32)
    if arr.ndim != 2:
        raise FormatError(f"feature matrix must be 2-D, got shape {arr.shape}")
    count, dim = arr.shape
    if dim == 0:
        raise FormatError("feature matrix must have at least one column")
    flags = FLAG_NORMALIZED if normalized else 0
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, flags, dim, count)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_features(path):
    """Read a DPFT file, returning ``(matrix, normalized_flag)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dtype, flags, dim, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    payload = raw[_HEADER.size:]
    expected = count * dim * 4
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    matrix = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    return matrix.copy(), bool(flags & FLAG_NORMALIZED)


def write_labels(path, labels):
    """Write integer labels as bare little-endian int32."""
    arr = np.ascontiguousarray(labels, dtype="<i4")
    if arr.ndim != 1:
        raise FormatError(f"labels must be 1-D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes(order="C"))


def read_labels(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) % 4 != 0:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of 4")
    return np.frombuffer(raw, dtype="<i4").astype(np.int32)
