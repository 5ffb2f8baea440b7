"""Hard {0, 1} masks stored as float32 H x W arrays."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError, EmptyMaskError, FormatError, MaskDisjointnessError
from .field import DTYPE
from .io import decode_pnm, encode_pnm, read_pnm, write_pnm


def as_mask(m) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[:, :, 0]
    if m.ndim != 2:
        raise DimensionError(f"mask must be H x W, got shape {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise FormatError("mask values must be exactly 0 or 1")
    return np.ascontiguousarray(m, dtype=DTYPE)


def check_disjoint(masks: Sequence[np.ndarray]) -> None:
    if not masks:
        return
    total = np.sum([as_mask(m) for m in masks], axis=0)
    over = np.argwhere(total > 1)
    if len(over):
        r, c = over[0]
        owners = [i for i, m in enumerate(masks) if m[r, c]]
        raise MaskDisjointnessError(f"masks {owners} overlap at pixel (row={r}, col={c})")


def background_mask(masks: Sequence[np.ndarray], shape=None) -> np.ndarray:
    """1 - sum(masks); with zero masks ``shape`` gives the frame size."""
    masks = [as_mask(m) for m in masks]
    if not masks:
        if shape is None:
            raise DimensionError("background_mask of no masks needs an explicit shape")
        return np.ones(tuple(shape)[:2], dtype=DTYPE)
    if any(m.shape != masks[0].shape for m in masks):
        raise DimensionError(f"mask shapes differ: {[m.shape for m in masks]}")
    check_disjoint(masks)
    return (1 - np.sum(masks, axis=0)).astype(DTYPE)


def bounding_box(m) -> tuple:
    m = as_mask(m)
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError("mask has no foreground pixels")
    return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])


def expanded_box_mask(m, margin: int = 2) -> np.ndarray:
    if margin < 0:
        raise DimensionError(f"box margin must be >= 0, got {margin}")
    m = as_mask(m)
    r0, r1, c0, c1 = bounding_box(m)
    H, W = m.shape
    out = np.zeros_like(m)
    out[max(r0 - margin, 0) : min(r1 + margin, H - 1) + 1, max(c0 - margin, 0) : min(c1 + margin, W - 1) + 1] = 1
    return out


def downsample_mask(m, factor: int) -> np.ndarray:
    """Block-max pooling: a block is foreground if any pixel in it is."""
    m = as_mask(m)
    H, W = m.shape
    if factor < 1 or H % factor or W % factor:
        raise DimensionError(f"factor {factor} does not divide mask shape {m.shape}")
    return m.reshape(H // factor, factor, W // factor, factor).max(axis=(1, 3))


def mask_from_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim != 2:
        raise FormatError("masks must be single-channel PGM images")
    return (img >= 128).astype(DTYPE)


def load_mask(path, shape=None) -> np.ndarray:
    m = mask_from_gray(read_pnm(path))
    if shape is not None and m.shape != tuple(shape)[:2]:
        raise DimensionError(f"{path}: mask is {m.shape}, expected {tuple(shape)[:2]}")
    return m


def mask_bytes(m) -> bytes:
    return encode_pnm((as_mask(m) * 255).astype(np.uint8))


def mask_from_bytes(buf: bytes, name="<bytes>") -> np.ndarray:
    return mask_from_gray(decode_pnm(buf, name))


def save_mask(m, path) -> None:
    write_pnm(path, (as_mask(m) * 255).astype(np.uint8))
