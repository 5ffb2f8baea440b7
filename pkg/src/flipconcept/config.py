"""JSON run configuration shared by the CLI commands."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from .errors import ConfigError
from .pipeline import BlendConfig, Stages
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_T

DENOISER_DEFAULTS = {"seed": 0, "patch_size": 4, "embed_dim": 32, "n_blocks": 2}


@dataclass
class ImageSpec:
    image_path: Path
    prompt: str = ""
    mask_path: Optional[Path] = None


@dataclass
class RunConfig:
    h: int
    w: int
    c: int
    background: ImageSpec
    concepts: List[ImageSpec]
    output_dir: Path
    latent_factor: int = 1
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    seed: int = 0
    alpha: float = 0.15
    beta: float = 0.8
    box_margin: int = 2
    stages: Stages = field(default_factory=Stages)
    guidance_steps: Optional[list] = None
    denoiser: dict = field(default_factory=lambda: dict(DENOISER_DEFAULTS))
    raw: dict = field(default_factory=dict)

    @property
    def latent_shape(self):
        f = self.latent_factor
        return (self.h // f, self.w // f, self.c)

    def blend_config(self) -> BlendConfig:
        return BlendConfig(
            alpha=self.alpha,
            beta=self.beta,
            T=self.T,
            beta_start=self.beta_start,
            beta_end=self.beta_end,
            seed=self.seed,
            box_margin=self.box_margin,
            stages=self.stages,
            guidance_steps=tuple(self.guidance_steps) if self.guidance_steps else None,
        )

    def echo(self) -> dict:
        """The config as it was actually run (after CLI overrides)."""
        out = dict(self.raw)
        out["seed"] = self.seed
        return out


def _get(doc: dict, key: str, kind, default=None, required=False):
    if key not in doc:
        if required:
            raise ConfigError(f"config is missing required key {key!r}")
        return default
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if (kind is int and isinstance(value, bool)) or not isinstance(value, kind):
        raise ConfigError(f"config key {key!r} must be {kind.__name__}, got {value!r}")
    return value


def _image_spec(doc, base: Path, where: str, need_mask: bool) -> ImageSpec:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be an object")
    image = base / _get(doc, "image_path", str, required=True)
    if not image.exists():
        raise ConfigError(f"{where}.image_path does not exist: {image}")
    mask = None
    if need_mask:
        mask = base / _get(doc, "mask_path", str, required=True)
        if not mask.exists():
            raise ConfigError(f"{where}.mask_path does not exist: {mask}")
    return ImageSpec(image, _get(doc, "prompt", str, ""), mask)


def parse_config(doc: dict, base: Path = Path(".")) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    size = _get(doc, "image_size", dict, required=True)
    h, w, c = (_get(size, k, int, required=True) for k in ("h", "w", "c"))
    if min(h, w) < 1 or c not in (1, 3):
        raise ConfigError(f"image_size must have positive h, w and c in {{1, 3}}, got {size}")
    factor = _get(doc, "latent_factor", int, 1)
    if factor < 1 or h % factor or w % factor:
        raise ConfigError(f"latent_factor {factor} must divide image size {h}x{w}")

    sched = _get(doc, "schedule", dict, {})
    T = _get(sched, "T", int, DEFAULT_T)
    b0 = _get(sched, "beta_start", float, DEFAULT_BETA_START)
    b1 = _get(sched, "beta_end", float, DEFAULT_BETA_END)
    if T < 1 or not 0 < b0 <= b1 < 1:
        raise ConfigError(f"schedule out of range: T={T}, beta_start={b0}, beta_end={b1}")

    seed = _get(doc, "seed", int, 0)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be a u64, got {seed}")
    alpha = _get(doc, "alpha", float, 0.15)
    beta = _get(doc, "beta", float, 0.8)
    if not math.isfinite(alpha):
        raise ConfigError(f"alpha must be finite, got {alpha}")
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must lie in [0, 1], got {beta}")
    margin = _get(doc, "box_margin", int, 2)
    if margin < 0:
        raise ConfigError(f"box_margin must be >= 0, got {margin}")

    flags = _get(doc, "stages", dict, {})
    stages = Stages(**{k: _get(flags, k, bool, True) for k in Stages.__dataclass_fields__})
    unknown = set(flags) - set(Stages.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown stage flags: {sorted(unknown)}")

    steps = _get(doc, "guidance_steps", list, None)
    if steps is not None and (len(steps) != 2 or not all(isinstance(v, int) for v in steps)):
        raise ConfigError("guidance_steps must be [lo, hi]")

    den = dict(DENOISER_DEFAULTS)
    den.update(_get(doc, "denoiser", dict, {}))
    if set(den) != set(DENOISER_DEFAULTS):
        raise ConfigError(f"unknown denoiser keys: {sorted(set(den) - set(DENOISER_DEFAULTS))}")
    if (h // factor) % den["patch_size"] or (w // factor) % den["patch_size"]:
        raise ConfigError(f"patch_size {den['patch_size']} must divide the latent size")

    background = _image_spec(_get(doc, "background", dict, required=True), base, "background", False)
    concepts = [
        _image_spec(cd, base, f"concepts[{i}]", True)
        for i, cd in enumerate(_get(doc, "concepts", list, []))
    ]
    output_dir = base / _get(doc, "output_dir", str, "out")
    return RunConfig(
        h, w, c, background, concepts, output_dir,
        latent_factor=factor, T=T, beta_start=b0, beta_end=b1, seed=seed,
        alpha=alpha, beta=beta, box_margin=margin, stages=stages,
        guidance_steps=steps, denoiser=den, raw=doc,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc, path.parent)
