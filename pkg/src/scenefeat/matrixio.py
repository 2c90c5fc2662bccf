"""Binary matrix dumps: magic SCNM, version, shape, float32 row-major."""

import struct
from pathlib import Path

import numpy as np

MATRIX_MAGIC = b"SCNM"
MATRIX_VERSION = 1


def save_matrix(path, matrix: np.ndarray) -> None:
    """Write a 2-D array as little-endian float32 with an SCNM header."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    rows, cols = matrix.shape
    header = MATRIX_MAGIC + struct.pack("<III", MATRIX_VERSION, rows, cols)
    body = np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def load_matrix(path) -> np.ndarray:
    """Read an SCNM matrix dump back as float64, validating the header."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16:
        raise ValueError(f"{path}: too short for an SCNM header")
    if raw[:4] != MATRIX_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, want {MATRIX_MAGIC!r}")
    version, rows, cols = struct.unpack_from("<III", raw, 4)
    if version != MATRIX_VERSION:
        raise ValueError(f"{path}: unsupported SCNM version {version}")
    expected = 16 + 4 * rows * cols
    if len(raw) != expected:
        raise ValueError(
            f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype="<f4", offset=16)
    return flat.astype(np.float64).reshape(rows, cols)
