"""Dense tensor primitives and their binary serialization.

Tensors are plain numpy arrays in row-major layout, float32 ("single") or
float64 ("double").  Every operation here is a pure function of its inputs
and raises instead of letting NaN/Inf propagate silently.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

SINGLE = np.float32
DOUBLE = np.float64

NORM_EPS = 1e-12

_MAGIC = b"CDBT"
_PRECISION_TAG = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_TAG_PRECISION = {1: np.float32, 2: np.float64}
_MAX_RANK = 8


class ShapeError(ValueError):
    """Operand shapes are missing, empty, or incompatible."""


class NumericError(FloatingPointError):
    """An operation produced (or received) NaN or Inf."""


def as_tensor(values, precision=SINGLE) -> np.ndarray:
    """Build a contiguous tensor of the requested precision."""
    if precision not in (SINGLE, DOUBLE):
        raise ValueError(f"precision must be float32 or float64, got {precision}")
    return np.ascontiguousarray(values, dtype=precision)


def check_finite(arr: np.ndarray, context: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {context}")
    return arr


def avg_pool_3x3_same(f: np.ndarray) -> np.ndarray:
    """3x3 average pooling with zero padding and shape preserved.

    Each output cell is the sum of its zero-padded 3x3 window divided by the
    fixed count 9, so border cells are damped rather than inflated and peak
    locations stay comparable across the map.
    """
    if f.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) tensor, got shape {f.shape}")
    c, h, w = f.shape
    if c < 1 or h < 1 or w < 1:
        raise ShapeError(f"empty tensor of shape {f.shape}")
    check_finite(f, "avg_pool_3x3_same input")
    padded = np.pad(f, ((0, 0), (1, 1), (1, 1)))
    acc = np.zeros_like(f)
    # Fixed accumulation order keeps results independent of any scheduling.
    for dr in range(3):
        for dc in range(3):
            acc += padded[:, dr : dr + h, dc : dc + w]
    acc /= f.dtype.type(9)
    return acc


def peak_positions(f: np.ndarray) -> np.ndarray:
    """Per-channel (row, col) of the maximum value; ties go to the lowest
    row-major flat index.  Returns an int64 array of shape (C, 2)."""
    if f.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) tensor, got shape {f.shape}")
    c, h, w = f.shape
    if c < 1 or h < 1 or w < 1:
        raise ShapeError(f"empty tensor of shape {f.shape}")
    check_finite(f, "peak_positions input")
    flat_idx = np.argmax(f.reshape(c, h * w), axis=1)
    return np.stack([flat_idx // w, flat_idx % w], axis=1).astype(np.int64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard 2-d matrix product with shape validation."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    out = a @ b
    return check_finite(out, "matmul output")


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    """Divide each row by its Euclidean norm; rows with norm below
    ``NORM_EPS`` come back as all zeros."""
    if x.ndim != 2:
        raise ShapeError(f"expected a (C, D) tensor, got shape {x.shape}")
    check_finite(x, "l2_normalize_rows input")
    norms = np.sqrt((x * x).sum(axis=1))
    safe = norms >= NORM_EPS
    out = np.zeros_like(x)
    if safe.any():
        out[safe] = x[safe] / norms[safe, None]
    return out


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    """Serialize one tensor: magic "CDBT", u8 rank, u32 extents, u8 precision
    tag (1 = float32, 2 = float64), then raw little-endian scalars."""
    dtype = np.dtype(arr.dtype)
    if dtype not in _PRECISION_TAG:
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    if arr.ndim > _MAX_RANK:
        raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum {_MAX_RANK}")
    fh.write(_MAGIC)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(struct.pack("<B", _PRECISION_TAG[dtype]))
    fh.write(np.ascontiguousarray(arr, dtype=dtype.newbyteorder("<")).tobytes())


class TensorFormatError(ValueError):
    """Serialized tensor bytes do not follow the expected layout."""


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TensorFormatError(f"truncated {what}: expected {n} bytes, found {len(buf)}")
    return buf


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = _read_exact(fh, 4, "header")
    if magic != _MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    rank = struct.unpack("<B", _read_exact(fh, 1, "rank"))[0]
    if rank > _MAX_RANK:
        raise TensorFormatError(f"rank {rank} exceeds the supported maximum {_MAX_RANK}")
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "extents"))
    tag = struct.unpack("<B", _read_exact(fh, 1, "precision tag"))[0]
    if tag not in _TAG_PRECISION:
        raise TensorFormatError(f"unknown precision tag {tag}")
    dtype = np.dtype(_TAG_PRECISION[tag]).newbyteorder("<")
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    raw = _read_exact(fh, count * dtype.itemsize, "payload")
    arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
    return arr.astype(arr.dtype.newbyteorder("="))


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
