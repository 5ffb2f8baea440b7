"""Deterministic numeric substrate.

Fields are plain ``numpy`` float32 arrays in C order. The helpers here pin
down the few places where numpy's defaults would leak platform behaviour:
matmul accumulates in float64, softmax subtracts the row max, and random
draws come from a self-contained splitmix64 + Box-Muller generator instead
of numpy's bit generators.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, FormatError

DTYPE = np.float32

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def as_field(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def _mask_like(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape == b.shape:
        return b
    # a single trailing channel axis is the only broadcast allowed
    if a.ndim == b.ndim + 1 and a.shape[:-1] == b.shape:
        return b[..., None]
    if a.ndim == b.ndim and b.shape[-1] == 1 and a.shape[:-1] == b.shape[:-1]:
        return b
    raise DimensionError(f"cannot combine shapes {a.shape} and {b.shape}")


def hadamard(a, b) -> np.ndarray:
    """Elementwise product; ``b`` may be an H x W mask against an H x W x C field."""
    a = as_field(a)
    b = as_field(b)
    return as_field(a * _mask_like(a, b))


def axpy(alpha: float, x, y) -> np.ndarray:
    x = as_field(x)
    y = as_field(y)
    if x.shape != y.shape:
        raise DimensionError(f"axpy shape mismatch {x.shape} vs {y.shape}")
    return as_field(DTYPE(alpha) * x + y)


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch {a.shape} x {b.shape}")
    return as_field(a.astype(np.float64) @ b.astype(np.float64))


def softmax_rows(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {a.shape}")
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return as_field(e / e.sum(axis=1, keepdims=True))


class Rng:
    """splitmix64 stream. Gaussians use Box-Muller over consecutive uniforms."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + idx * _GAMMA
        self.state = (self.state + n * int(_GAMMA)) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))

    def uniform(self, n: int) -> np.ndarray:
        """Float64 draws in [0, 1) with 53 bits of resolution."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def randn(self, shape: Sequence[int]) -> np.ndarray:
        shape = tuple(int(s) for s in shape)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return as_field(out[:n].reshape(shape))


def randn(rng: Rng, shape: Sequence[int]) -> np.ndarray:
    return rng.randn(shape)


def derive_seed(seed: int, *labels) -> int:
    """Stable child seed, independent of Python's salted ``hash``."""
    text = ":".join([str(int(seed) & _MASK64), *map(str, labels)])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


# -- LTF1 raw field files ---------------------------------------------------

LTF_MAGIC = b"LTF1"


def ltf_bytes(field) -> bytes:
    field = as_field(field)
    head = LTF_MAGIC + struct.pack("<B", field.ndim)
    head += struct.pack(f"<{field.ndim}I", *field.shape)
    return head + field.astype("<f4").tobytes()


def ltf_decode(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    if buf[:4] != LTF_MAGIC:
        raise FormatError(f"{name}: bad LTF1 magic {buf[:4]!r}")
    if len(buf) < 5:
        raise FormatError(f"{name}: truncated header")
    rank = buf[4]
    end = 5 + 4 * rank
    if len(buf) < end:
        raise FormatError(f"{name}: truncated header")
    dims = struct.unpack(f"<{rank}I", buf[5:end])
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) != end + 4 * n or any(d == 0 for d in dims):
        raise FormatError(f"{name}: payload size does not match dims {dims}")
    return as_field(np.frombuffer(buf, dtype="<f4", offset=end).reshape(dims))


def save_ltf(field, path) -> None:
    from .io import atomic_write

    atomic_write(path, ltf_bytes(field))


def load_ltf(path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    return ltf_decode(buf, str(path))
