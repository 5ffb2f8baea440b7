"""Guided appearance attention: key swap plus value guidance."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .denoiser import RECORD, AttentionTap
from .errors import DimensionError, ParameterError
from .field import DTYPE, as_field

DEFAULT_ALPHA = 0.15


@dataclass(frozen=True)
class GuidanceConfig:
    alpha: float = DEFAULT_ALPHA
    # inclusive (lo, hi) timestep window; None applies guidance at every step
    step_range: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if not math.isfinite(self.alpha):
            raise ParameterError(f"alpha must be finite, got {self.alpha}")

    def active(self, t: int) -> bool:
        if self.step_range is None:
            return True
        lo, hi = self.step_range
        return lo <= t <= hi


def value_guidance(v_per, v_ref, alpha: float) -> np.ndarray:
    """V_per + alpha * (V_per - V_ref), elementwise."""
    v_per = as_field(v_per)
    v_ref = as_field(v_ref)
    if v_per.shape != v_ref.shape:
        raise DimensionError(f"value guidance shape mismatch {v_per.shape} vs {v_ref.shape}")
    return as_field(v_per + DTYPE(alpha) * (v_per - v_ref))


def make_guided_tap(
    recorded_per: AttentionTap, recorded_ref: AttentionTap, cfg: GuidanceConfig
) -> AttentionTap:
    if recorded_per.mode != RECORD or recorded_ref.mode != RECORD:
        raise ParameterError("make_guided_tap needs two recording taps")
    per, ref = recorded_per.recorded, recorded_ref.recorded
    if len(per) != len(ref):
        raise DimensionError(f"block count mismatch: {len(per)} vs {len(ref)}")
    override = []
    for b, ((k_per, v_per), (k_ref, v_ref)) in enumerate(zip(per, ref)):
        if k_per.shape != k_ref.shape:
            raise DimensionError(f"block {b}: key shape {k_per.shape} vs {k_ref.shape}")
        override.append((k_per, value_guidance(v_per, v_ref, cfg.alpha)))
    return AttentionTap.replace(override)
