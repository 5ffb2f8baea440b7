"""Edit-friendly DDPM inversion and a deterministic DDIM baseline.

Every x_t on the auxiliary path gets its own independent noise draw, so the
extracted per-step noise maps absorb whatever is needed to walk the reverse
process back onto the path. Replaying them reconstructs x0 up to float32
rounding.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Union

import numpy as np

from .denoiser import Denoiser, PromptEmbedding, embed_prompt, predict_noise
from .errors import DimensionError, FormatError, NumericContractError
from .field import DTYPE, Rng, as_field, load_ltf, save_ltf
from .io import write_json
from .schedule import NoiseSchedule, linear_schedule, posterior_mean

TapSource = Union[None, Mapping, Callable]


@dataclass(eq=False)
class NoiseMapTrack:
    x_T: np.ndarray
    z: np.ndarray  # (T + 1, *shape); z[t] is the map for step t, rows 0 and 1 are zeros
    cond: Optional[PromptEmbedding]
    schedule: dict
    path: Optional[list] = None  # x_1..x_T, kept for diagnostics only

    @property
    def T(self) -> int:
        return self.z.shape[0] - 1

    @property
    def shape(self):
        return self.x_T.shape

    def check(self, s: NoiseSchedule) -> None:
        if self.schedule != s.params():
            raise DimensionError(f"track schedule {self.schedule} != {s.params()}")
        if self.z.shape[1:] != self.x_T.shape:
            raise DimensionError("noise maps and terminal latent disagree on shape")


def forward_sample(x0, eps, t: int, s: NoiseSchedule) -> np.ndarray:
    ab = s.alpha_bar[t]
    return as_field(DTYPE(np.sqrt(ab)) * as_field(x0) + DTYPE(np.sqrt(1.0 - ab)) * as_field(eps))


def noising_path(x0, s: NoiseSchedule, rng: Rng) -> list:
    """[x_1, ..., x_T], each from a fresh draw; draws are taken for t = 1..T in order."""
    x0 = as_field(x0)
    if not np.all(np.isfinite(x0)):
        raise NumericContractError("x0 contains non-finite values")
    return [forward_sample(x0, rng.randn(x0.shape), t, s) for t in range(1, s.T + 1)]


def reverse_step(x_t, eps, t: int, s: NoiseSchedule, z) -> np.ndarray:
    mu = posterior_mean(x_t, eps, t, s)
    if s.sigma[t] == 0.0:
        return mu
    return as_field(mu + DTYPE(s.sigma[t]) * as_field(z))


def anchor_first_step(x0, x1, d: Denoiser, cond, s: NoiseSchedule, tol=1e-6, max_iter=100):
    """Move x_1 onto the fixed point x_1 = sqrt(abar_1) x0 + sqrt(1 - abar_1) eps(x_1, 1).

    With sigma_1 = 0 the last reverse step is deterministic, so the only way
    it can land on x0 is for mu_1(x_1) to equal x0. The map is a contraction
    with factor about sqrt(beta_1) times the denoiser's Lipschitz constant;
    iteration starts from the independently sampled x_1.
    """
    x = as_field(x1)
    for _ in range(max_iter):
        eps = predict_noise(d, x, 1, cond)
        if np.abs(posterior_mean(x, eps, 1, s) - x0).max() <= tol:
            return x
        x = forward_sample(x0, eps, 1, s)
    raise NumericContractError(f"x_1 anchoring did not converge within {max_iter} iterations")


def extract_noise_maps(
    x0, path: list, d: Denoiser, cond: Optional[PromptEmbedding], s: NoiseSchedule
) -> NoiseMapTrack:
    x0 = as_field(x0)
    if len(path) != s.T:
        raise DimensionError(f"path has {len(path)} latents, schedule has T={s.T}")
    xs = [x0, *map(as_field, path)]
    if any(x.shape != x0.shape for x in xs):
        raise DimensionError("path latents must share the shape of x0")
    xs[1] = anchor_first_step(x0, xs[1], d, cond, s)
    z = np.zeros((s.T + 1, *x0.shape), dtype=DTYPE)
    for t in range(s.T, 1, -1):
        sigma = s.sigma[t]
        if sigma == 0.0:
            raise NumericContractError(f"sigma_{t} is zero; cannot extract a noise map")
        mu = posterior_mean(xs[t], predict_noise(d, xs[t], t, cond), t, s)
        z[t] = (xs[t - 1] - mu) / DTYPE(sigma)
    return NoiseMapTrack(xs[-1].copy(), z, cond, s.params(), path=xs[1:])


def invert(x0, d: Denoiser, cond, s: NoiseSchedule, rng: Rng) -> NoiseMapTrack:
    return extract_noise_maps(x0, noising_path(x0, s, rng), d, cond, s)


def _tap_at(taps: TapSource, t: int):
    if taps is None:
        return None
    if callable(taps):
        return taps(t)
    return taps.get(t)


def replay_step(x_t, t: int, track: NoiseMapTrack, d: Denoiser, cond, s, tap=None) -> np.ndarray:
    eps = predict_noise(d, x_t, t, cond, tap)
    return reverse_step(x_t, eps, t, s, track.z[t])


def replay(
    track: NoiseMapTrack,
    d: Denoiser,
    cond: Optional[PromptEmbedding],
    s: NoiseSchedule,
    taps: TapSource = None,
    until: int = 0,
) -> np.ndarray:
    """Run the reverse chain from x_T down to x_until (x0 by default).

    ``taps`` is a mapping or callable from timestep to an AttentionTap.
    """
    track.check(s)
    x = track.x_T
    for t in range(s.T, until, -1):
        x = replay_step(x, t, track, d, cond, s, _tap_at(taps, t))
    return x


def _x0_estimate(x, eps, ab: float) -> np.ndarray:
    return as_field((x - DTYPE(np.sqrt(1.0 - ab)) * eps) / DTYPE(np.sqrt(ab)))


def ddim_invert(x0, d: Denoiser, cond, s: NoiseSchedule) -> NoiseMapTrack:
    """Deterministic (eta = 0) DDIM inversion.

    The returned track's ``z[t]`` holds the residual the DDPM reverse step
    would need to land on the DDIM path, i.e. (x_{t-1} - mu_t(x_t)) / sigma_t.
    """
    x = as_field(x0)
    xs = [x]
    for t in range(1, s.T + 1):
        eps = predict_noise(d, x, t, cond)
        x = forward_sample(_x0_estimate(x, eps, s.alpha_bar[t - 1]), eps, t, s)
        xs.append(x)
    z = np.zeros((s.T + 1, *x.shape), dtype=DTYPE)
    for t in range(s.T, 1, -1):
        mu = posterior_mean(xs[t], predict_noise(d, xs[t], t, cond), t, s)
        z[t] = (xs[t - 1] - mu) / DTYPE(s.sigma[t])
    return NoiseMapTrack(x.copy(), z, cond, s.params(), path=xs[1:])


def ddim_sample(x_T, d: Denoiser, cond, s: NoiseSchedule) -> np.ndarray:
    x = as_field(x_T)
    for t in range(s.T, 0, -1):
        eps = predict_noise(d, x, t, cond)
        x = forward_sample(_x0_estimate(x, eps, s.alpha_bar[t]), eps, t - 1, s)
    return x


def noise_map_stats(track: NoiseMapTrack) -> dict:
    """Per-step variance of z[t] (t >= 2) and Pearson corr(z[t], z[t+1])."""
    var, corr = {}, {}
    for t in range(2, track.T + 1):
        var[t] = float(track.z[t].astype(np.float64).var())
        if t < track.T:
            a = track.z[t].ravel().astype(np.float64)
            b = track.z[t + 1].ravel().astype(np.float64)
            corr[t] = float(np.corrcoef(a, b)[0, 1])
    return {"var": var, "corr": corr}


# -- track directories --------------------------------------------------------


def save_track(track: NoiseMapTrack, directory) -> None:
    directory = Path(directory)
    save_ltf(track.x_T, directory / "x_T.ltf")
    for t in range(2, track.T + 1):
        save_ltf(track.z[t], directory / f"z_{t:04d}.ltf")
    write_json(
        directory / "manifest.json",
        {
            "schedule": track.schedule,
            "cond_tokens": list(track.cond.tokens) if track.cond is not None else None,
            "embed_dim": int(track.cond.vectors.shape[1]) if track.cond is not None else None,
            "shape": list(track.shape),
        },
    )


def load_track(directory) -> NoiseMapTrack:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
        sched = manifest["schedule"]
        shape = tuple(manifest["shape"])
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"{directory / 'manifest.json'}: {exc}") from exc
    s = linear_schedule(sched["T"], sched["beta_start"], sched["beta_end"])
    x_T = load_ltf(directory / "x_T.ltf")
    z = np.zeros((s.T + 1, *shape), dtype=DTYPE)
    for t in range(2, s.T + 1):
        z[t] = load_ltf(directory / f"z_{t:04d}.ltf")
    cond = None
    if manifest.get("cond_tokens") is not None:
        cond = embed_prompt(manifest["cond_tokens"], manifest["embed_dim"])
    if x_T.shape != shape:
        raise FormatError(f"{directory}: x_T shape {x_T.shape} != manifest shape {shape}")
    return NoiseMapTrack(x_T, z, cond, s.params())
