"""Bit packing for b-bit unsigned codes, 1 <= b <= 31.

Layout: row-major, LSB-first within each byte, every row padded to a whole
byte.  This is the same layout the binary file format stores, so packed code
arrays round-trip byte-for-byte.
"""

from __future__ import annotations

import numpy as np


def row_bytes(cols: int, bits: int) -> int:
    return (cols * bits + 7) // 8


def pack_codes(codes, bits: int) -> np.ndarray:
    """Pack an (n, d) array of codes < 2**bits into (n, row_bytes) uint8."""
    if not 1 <= bits <= 31:
        raise ValueError(f"bits must be in [1, 31], got {bits}")
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ValueError(f"codes must be 2-D, got shape {codes.shape}")
    if codes.size and (codes.min() < 0 or int(codes.max()) >= (1 << bits)):
        raise ValueError(f"codes out of range for {bits}-bit packing")
    n, d = codes.shape
    shifts = np.arange(bits, dtype=np.uint64)
    lsb_first = ((codes.astype(np.uint64)[:, :, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    flat = lsb_first.reshape(n, d * bits)
    pad = row_bytes(d, bits) * 8 - d * bits
    if pad:
        flat = np.pad(flat, ((0, 0), (0, pad)))
    return np.packbits(flat, axis=1, bitorder="little")


def unpack_codes(packed, cols: int, bits: int) -> np.ndarray:
    """Inverse of :func:`pack_codes`; returns (n, cols) uint32."""
    if not 1 <= bits <= 31:
        raise ValueError(f"bits must be in [1, 31], got {bits}")
    packed = np.asarray(packed, dtype=np.uint8)
    if packed.ndim != 2:
        raise ValueError(f"packed codes must be 2-D, got shape {packed.shape}")
    expected = row_bytes(cols, bits)
    if packed.shape[1] != expected:
        raise ValueError(
            f"packed row is {packed.shape[1]} bytes, expected {expected} for {cols} {bits}-bit codes"
        )
    flat = np.unpackbits(packed, axis=1, bitorder="little")[:, : cols * bits]
    vals = flat.reshape(packed.shape[0], cols, bits).astype(np.uint64)
    weights = np.uint64(1) << np.arange(bits, dtype=np.uint64)
    out = (vals * weights).sum(axis=2, dtype=np.uint64)
    return out.astype(np.uint32)
