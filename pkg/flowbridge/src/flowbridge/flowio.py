"""Binary flow-file interchange format, standalone.

Layout: magic "PIEH", little-endian int32 width and height, then
row-major interleaved float32 (u, v) pairs.  The writer goes through a
temporary file in the same directory and renames into place, so readers
never observe a half-written file.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

FLOW_MAGIC = b"PIEH"


def write_flow_file(field_uv: np.ndarray, path: str | Path) -> None:
    """Write an (H, W, 2) displacement field atomically."""
    field_uv = np.asarray(field_uv)
    if field_uv.ndim != 3 or field_uv.shape[-1] != 2:
        raise ValueError(f"flow field must be (H,W,2), got {field_uv.shape}")
    h, w = field_uv.shape[:2]
    payload = np.ascontiguousarray(field_uv, dtype="<f4")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(FLOW_MAGIC)
        f.write(struct.pack("<ii", w, h))
        f.write(payload.tobytes())
    os.replace(tmp, path)


def read_flow_file(path: str | Path) -> np.ndarray:
    """Read a flow file written by :func:`write_flow_file`; float32 (H, W, 2)."""
    with open(path, "rb") as f:
        header = f.read(12)
        if len(header) < 12:
            raise ValueError(f"{path}: truncated flow header")
        if header[:4] != FLOW_MAGIC:
            raise ValueError(f"{path}: bad magic {header[:4]!r}")
        w, h = struct.unpack("<ii", header[4:12])
        if w <= 0 or h <= 0:
            raise ValueError(f"{path}: invalid dimensions {w}x{h}")
        payload = f.read()
    expected = 2 * w * h * 4
    if len(payload) != expected:
        raise ValueError(f"{path}: truncated payload ({len(payload)} of {expected} bytes)")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, 2)
