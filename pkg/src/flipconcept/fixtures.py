"""Synthetic inputs standing in for generated backgrounds and segmentation masks.

Layout for an H x W frame (defaults 32 x 32, three channels), all driven by
one seed:

* ``background``: a linear colour gradient along a seeded direction.
* ``concept_1``: a two-colour checkerboard with 4-pixel cells.
* ``concept_2``: concentric two-colour rings.
* ``mask_1``: an 8 x 8 block (64 pixels) placed in the left half.
* ``mask_2``: a radius-4 disc (49 pixels) centred in the right half, so the
  two masks never overlap.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .field import Rng, derive_seed, save_ltf
from .io import write_json, write_pnm
from .masks import save_mask
from .pipeline import encode

BLOCK = 8
DISC_RADIUS = 4
MASK_1_PIXELS = BLOCK * BLOCK


def _ints(rng: Rng, *highs: int) -> list:
    """Uniform integers in [0, high) for each ``high``."""
    return [int(u * h) for u, h in zip(rng.uniform(len(highs)), highs)]


def _colours(rng: Rng, n: int, c: int) -> np.ndarray:
    return np.floor(rng.uniform(n * c) * 256).reshape(n, c)


def make_images(seed: int, h: int = 32, w: int = 32, c: int = 3) -> dict:
    if h < 2 * BLOCK or w < 4 * BLOCK:
        raise ValueError(f"fixture frame {h}x{w} too small")
    rng = Rng(derive_seed(seed, "fixtures"))
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)

    theta = 2 * np.pi * rng.uniform(1)[0]
    g = np.cos(theta) * rows / (h - 1) + np.sin(theta) * cols / (w - 1)
    g = (g - g.min()) / (g.max() - g.min())
    lo, hi = _colours(rng, 2, c)
    background = lo + g[..., None] * (hi - lo)

    a, b = _colours(rng, 2, c)
    checker = ((rows // 4 + cols // 4) % 2)[..., None]
    concept_1 = np.where(checker == 1, a, b)

    a, b = _colours(rng, 2, c)
    radius = np.hypot(rows - (h - 1) / 2, cols - (w - 1) / 2)
    rings = ((radius // 3) % 2)[..., None]
    concept_2 = np.where(rings == 1, a, b)

    r1, c1 = _ints(rng, h - BLOCK + 1, w // 2 - BLOCK + 1)
    mask_1 = np.zeros((h, w), dtype=np.float32)
    mask_1[r1 : r1 + BLOCK, c1 : c1 + BLOCK] = 1

    rr, cc = _ints(rng, h - 2 * DISC_RADIUS, w // 2 - 2 * DISC_RADIUS)
    cr, ccol = rr + DISC_RADIUS, w // 2 + DISC_RADIUS + cc
    mask_2 = (((rows - cr) ** 2 + (cols - ccol) ** 2) <= DISC_RADIUS**2).astype(np.float32)

    def u8(img):
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        return img[:, :, 0] if c == 1 else img

    return {
        "background": u8(background),
        "concept_1": u8(concept_1),
        "concept_2": u8(concept_2),
        "mask_1": mask_1,
        "mask_2": mask_2,
    }


def write_fixtures(out_dir, seed: int, h: int = 32, w: int = 32, c: int = 3) -> Path:
    """Write images, masks, LTF1 latents and a ready-to-run config.json."""
    out_dir = Path(out_dir)
    imgs = make_images(seed, h, w, c)
    ext = "ppm" if c == 3 else "pgm"
    for name in ("background", "concept_1", "concept_2"):
        write_pnm(out_dir / f"{name}.{ext}", imgs[name])
        save_ltf(encode(imgs[name]), out_dir / f"{name}.ltf")
    for name in ("mask_1", "mask_2"):
        save_mask(imgs[name], out_dir / f"{name}.pgm")
    config = {
        "image_size": {"h": h, "w": w, "c": c},
        "latent_factor": 1,
        "schedule": {"T": 50, "beta_start": 1e-4, "beta_end": 0.02},
        "seed": seed,
        "alpha": 0.15,
        "beta": 0.8,
        "box_margin": 2,
        "stages": {"guided_attention": True, "background_dilution": True, "ref_noise_resynthesis": True},
        "background": {"image_path": f"background.{ext}", "prompt": "a quiet beach"},
        "concepts": [
            {"image_path": f"concept_1.{ext}", "mask_path": "mask_1.pgm", "prompt": "a checkered cube"},
            {"image_path": f"concept_2.{ext}", "mask_path": "mask_2.pgm", "prompt": "a ringed ball"},
        ],
        "output_dir": "out",
    }
    path = out_dir / "config.json"
    write_json(path, config)
    return path
