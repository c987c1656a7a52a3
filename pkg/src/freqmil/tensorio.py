"""Flat binary tensor files: 32-byte header + row-major little-endian float32.

Header layout (little-endian): magic ``FQT1``, version u32, dtype code u32
(0 = float32), channels u32, height u32, width u32, centered flag u32, one
reserved u32. Used for raster images and packed frequency crops exchanged
between the ``preprocess`` and ``train`` CLI stages.
"""

import struct

import numpy as np

MAGIC = b"FQT1"
VERSION = 1
DTYPE_FLOAT32 = 0
_HEADER = struct.Struct("<4sIIIIIII")
HEADER_SIZE = _HEADER.size  # 32 bytes


class TensorFormatError(ValueError):
    """Corrupt or truncated tensor file; the message carries the byte offset."""


def write_tensor(path, data: np.ndarray, centered: bool = False) -> None:
    """Write a (C, H, W) array as float32 with the fixed header."""
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"expected (C, H, W) array, got shape {data.shape}")
    c, h, w = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32, c, h, w, int(centered), 0)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_tensor(path) -> tuple[np.ndarray, bool]:
    """Read a tensor file, returning (float32 array of shape (C, H, W), centered)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < HEADER_SIZE:
        raise TensorFormatError(
            f"truncated header at byte 0: got {len(raw)} bytes, need {HEADER_SIZE}"
        )
    magic, version, dtype, c, h, w, centered, _ = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r} at byte 0, expected {MAGIC!r}")
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version} at byte 4")
    if dtype != DTYPE_FLOAT32:
        raise TensorFormatError(f"unknown dtype code {dtype} at byte 8")
    expected = c * h * w * 4
    got = len(raw) - HEADER_SIZE
    if got != expected:
        raise TensorFormatError(
            f"truncated payload at byte {HEADER_SIZE}: expected {expected} bytes, "
            f"got {got}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE).reshape(c, h, w)
    return data.copy(), bool(centered)
