"""File plumbing: atomic writes and binary PGM/PPM (P5/P6, maxval 255)."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _header_tokens(buf: bytes, count: int, name: str):
    tokens = []
    i = 0
    while len(tokens) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if i < len(buf) and buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(buf) and not buf[i : i + 1].isspace() and buf[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise FormatError(f"{name}: truncated header")
        tokens.append(buf[start:i])
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def decode_pnm(buf: bytes, name: str = "<bytes>") -> np.ndarray:
    """Return a uint8 array of shape (H, W) for P5 or (H, W, 3) for P6."""
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{name}: not a binary PGM/PPM file")
    try:
        tokens, offset = _header_tokens(buf, 4, name)
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{name}: malformed header") from exc
    if maxval != 255:
        raise FormatError(f"{name}: only maxval 255 is supported (got {maxval})")
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    raster = buf[offset : offset + n]
    if width <= 0 or height <= 0 or len(raster) != n:
        raise FormatError(f"{name}: raster size does not match {width}x{height}")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return img[:, :, 0].copy() if channels == 1 else img.copy()


def encode_pnm(img) -> bytes:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise FormatError(f"expected uint8 image, got {img.dtype}")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise FormatError(f"unsupported image shape {img.shape}")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes()


def read_pnm(path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc.strerror}") from exc
    return decode_pnm(buf, str(path))


def write_pnm(path, img) -> None:
    atomic_write(path, encode_pnm(img))
