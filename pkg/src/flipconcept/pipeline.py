"""Multi-branch blending loop.

Branches, all sharing one latent shape:

* ``back`` replays the background's inversion track unchanged.
* ``per[i]`` replays concept i's own track; its self-attention K/V feed the
  matching reference branch.
* ``ref[i]`` starts from the background terminal latent and is denoised
  with concept i's keys and guided values.
* ``out`` starts from the background terminal latent and is denoised with
  the mask-mixed noise prediction.

Every reverse step, except in the ``per`` branches, injects the background
track's noise map, so all branches share one stochastic path.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .attention import GuidanceConfig, make_guided_tap
from .denoiser import AttentionTap, Denoiser, PromptEmbedding, embed_prompt, predict_noise, tokenize
from .errors import DimensionError, EmptyMaskError, ParameterError
from .field import DTYPE, Rng, as_field, derive_seed, hadamard
from .inversion import NoiseMapTrack, invert, replay, replay_step, reverse_step
from .masks import as_mask, background_mask, check_disjoint, expanded_box_mask
from .schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, NoiseSchedule, linear_schedule

COUNTER_NAMES = ("noise_mix", "taps", "guided_attention", "ref_noise_resynthesis", "background_dilution")


@dataclass(frozen=True)
class Stages:
    guided_attention: bool = True
    background_dilution: bool = True
    ref_noise_resynthesis: bool = True


# ablation rows: (a) mask-guided mixing only ... (d) everything
ABLATIONS = {
    "a": Stages(False, False, False),
    "b": Stages(True, False, False),
    "c": Stages(True, True, False),
    "d": Stages(True, True, True),
}


@dataclass(frozen=True)
class BlendConfig:
    alpha: float = 0.15
    beta: float = 0.8
    T: int = 50
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    seed: int = 0
    box_margin: int = 2
    stages: Stages = field(default_factory=Stages)
    guidance_steps: Optional[tuple] = None
    threads: int = 1  # 0 = one per CPU

    def __post_init__(self):
        if not np.isfinite(self.alpha) or not np.isfinite(self.beta):
            raise ParameterError("alpha and beta must be finite")
        if self.box_margin < 0:
            raise ParameterError(f"box_margin must be >= 0, got {self.box_margin}")

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.T, self.beta_start, self.beta_end)

    def guidance(self) -> GuidanceConfig:
        steps = tuple(self.guidance_steps) if self.guidance_steps is not None else None
        return GuidanceConfig(self.alpha, steps)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["guidance_steps"] = list(self.guidance_steps) if self.guidance_steps else None
        return out


@dataclass(eq=False)
class ConceptInput:
    image: np.ndarray
    mask: np.ndarray
    prompt_tokens: Sequence[str] = ()
    track: Optional[NoiseMapTrack] = None


@dataclass(eq=False)
class BlendState:
    t: int
    z_out: np.ndarray
    z_back: np.ndarray
    z_per: List[np.ndarray]
    z_ref: List[np.ndarray]
    mask_back: np.ndarray
    masks: List[np.ndarray]
    box_masks: List[np.ndarray]
    back_track: NoiseMapTrack
    concept_tracks: List[NoiseMapTrack]
    back_cond: Optional[PromptEmbedding]
    concept_conds: List[PromptEmbedding]
    out_cond: Optional[PromptEmbedding]
    counters: dict
    # noise predictions from the step that produced this state
    last: dict = field(default_factory=dict)

    @property
    def n_concepts(self) -> int:
        return len(self.masks)


def _validate_concepts(background: np.ndarray, concepts: Sequence[ConceptInput]) -> None:
    for i, c in enumerate(concepts):
        img = as_field(c.image)
        if img.shape != background.shape:
            raise DimensionError(f"concept {i} image {img.shape} != background {background.shape}")
        if not np.all(np.isfinite(img)):
            raise ParameterError(f"concept {i} image has non-finite values")
        m = as_mask(c.mask)
        if m.shape != background.shape[:2]:
            raise DimensionError(f"concept {i} mask {m.shape} != latent frame {background.shape[:2]}")
        if not m.any():
            raise EmptyMaskError(f"concept {i} mask is empty")
    check_disjoint([as_mask(c.mask) for c in concepts])


def prepare(
    background,
    concepts: Sequence[ConceptInput],
    cfg: BlendConfig,
    d: Denoiser,
    background_prompt="",
) -> BlendState:
    background = as_field(background)
    _validate_concepts(background, concepts)
    s = cfg.schedule()
    back_cond = embed_prompt(background_prompt, d.embed_dim)
    back_track = invert(background, d, back_cond, s, Rng(derive_seed(cfg.seed, "background")))

    concept_conds, concept_tracks = [], []
    for i, c in enumerate(concepts):
        cond = embed_prompt(tuple(c.prompt_tokens), d.embed_dim)
        rng = Rng(derive_seed(cfg.seed, "concept", i))
        c.track = invert(as_field(c.image), d, cond, s, rng)
        concept_conds.append(cond)
        concept_tracks.append(c.track)

    masks = [as_mask(c.mask) for c in concepts]
    out_tokens = tokenize(background_prompt) + tuple(t for c in concepts for t in c.prompt_tokens)
    x_T = back_track.x_T
    return BlendState(
        t=s.T,
        z_out=x_T.copy(),
        z_back=x_T.copy(),
        z_per=[tr.x_T.copy() for tr in concept_tracks],
        z_ref=[x_T.copy() for _ in concepts],
        mask_back=background_mask(masks, background.shape),
        masks=masks,
        box_masks=[expanded_box_mask(m, cfg.box_margin) for m in masks],
        back_track=back_track,
        concept_tracks=concept_tracks,
        back_cond=back_cond,
        concept_conds=concept_conds,
        out_cond=embed_prompt(out_tokens, d.embed_dim),
        counters={name: 0 for name in COUNTER_NAMES},
    )


def _thread_count(cfg: BlendConfig) -> int:
    n = cfg.threads
    env = os.environ.get("FLIPCONCEPT_THREADS")
    if env is not None:
        n = int(env)
    if n == 0:
        return os.cpu_count() or 1
    return max(n, 1)


def _concept_branch(state: BlendState, i: int, d: Denoiser, s: NoiseSchedule, guided: bool, guidance):
    """Advance per[i] one step and predict eps for ref[i] at the same t."""
    t = state.t
    cond = state.concept_conds[i]
    per_tap = AttentionTap.record() if guided else None
    z_per = replay_step(state.z_per[i], t, state.concept_tracks[i], d, cond, s, per_tap)
    if not guided:
        return z_per, predict_noise(d, state.z_ref[i], t, cond), 0
    ref_tap = AttentionTap.record()
    predict_noise(d, state.z_ref[i], t, cond, ref_tap)
    tap = make_guided_tap(per_tap, ref_tap, guidance)
    return z_per, predict_noise(d, state.z_ref[i], t, cond, tap), 3


MixHook = Callable[[BlendState, np.ndarray], np.ndarray]


def step(
    state: BlendState,
    d: Denoiser,
    cfg: BlendConfig,
    s: Optional[NoiseSchedule] = None,
    mix_hook: Optional[MixHook] = None,
) -> BlendState:
    """One reverse step t -> t-1 of every branch.

    ``mix_hook`` receives the mixed noise and may return a replacement; it is
    the attachment point for swap-style guidance and is unused by default.
    """
    t = state.t
    if t < 1:
        raise ParameterError("step called at t=0; the chain is already finished")
    s = s or cfg.schedule()
    st = cfg.stages
    guidance = cfg.guidance()
    guided = st.guided_attention and guidance.active(t)
    n = state.n_concepts
    counters = dict(state.counters)

    eps_back = predict_noise(d, state.z_back, t, state.back_cond)
    workers = min(_thread_count(cfg), n)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda i: _concept_branch(state, i, d, s, guided, guidance), range(n)))
    else:
        results = [_concept_branch(state, i, d, s, guided, guidance) for i in range(n)]
    z_per = [r[0] for r in results]
    eps_ref = [r[1] for r in results]
    counters["taps"] += sum(r[2] for r in results)
    if guided:
        counters["guided_attention"] += n

    eps_gui = hadamard(eps_back, state.mask_back)
    for e, m in zip(eps_ref, state.masks):
        eps_gui = eps_gui + hadamard(e, m)
    counters["noise_mix"] += 1
    if mix_hook is not None:
        eps_gui = as_field(mix_hook(state, eps_gui))

    eps_ref_mixed = eps_ref
    if st.ref_noise_resynthesis:
        eps_ref_mixed = [hadamard(e, m) + hadamard(eps_back, 1 - m) for e, m in zip(eps_ref, state.masks)]
        counters["ref_noise_resynthesis"] += n

    noise = state.back_track.z[t]
    z_out = reverse_step(state.z_out, eps_gui, t, s, noise)
    z_back = reverse_step(state.z_back, eps_back, t, s, noise)
    z_ref = [reverse_step(z, e, t, s, noise) for z, e in zip(state.z_ref, eps_ref_mixed)]

    if st.background_dilution:
        beta = DTYPE(cfg.beta)
        z_ref = [
            as_field(hadamard(z_back, beta * (1 - box)) + hadamard(z, box))
            for z, box in zip(z_ref, state.box_masks)
        ]
        counters["background_dilution"] += n

    return replace(
        state,
        t=t - 1,
        z_out=z_out,
        z_back=z_back,
        z_per=z_per,
        z_ref=z_ref,
        counters=counters,
        last={"t": t, "eps_back": eps_back, "eps_gui": eps_gui, "eps_ref": eps_ref},
    )


def run(state: BlendState, d: Denoiser, cfg: BlendConfig, observer=None, mix_hook=None) -> BlendState:
    s = cfg.schedule()
    while state.t > 0:
        state = step(state, d, cfg, s, mix_hook)
        if observer is not None:
            observer(state)
    return state


def generate(
    background,
    concepts: Sequence[ConceptInput],
    cfg: BlendConfig,
    d: Denoiser,
    background_prompt="",
    observer=None,
) -> np.ndarray:
    state = prepare(background, concepts, cfg, d, background_prompt)
    return run(state, d, cfg, observer).z_out


def background_reconstruction(state: BlendState, d: Denoiser, cfg: BlendConfig) -> np.ndarray:
    return replay(state.back_track, d, state.back_cond, cfg.schedule())


# -- latent <-> 8-bit image ---------------------------------------------------


def decode(z0) -> np.ndarray:
    """Map [-1, 1] latents to uint8, rounding half away from zero."""
    z0 = as_field(z0)
    if z0.ndim != 3 or z0.shape[2] not in (1, 3):
        raise DimensionError(f"decode supports H x W x 1 or H x W x 3 latents, got {z0.shape}")
    if not np.all(np.isfinite(z0)):
        raise ParameterError("cannot decode a non-finite latent")
    v = np.clip((z0.astype(np.float64) + 1.0) / 2.0, 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def encode(img, factor: int = 1) -> np.ndarray:
    """uint8 image -> latent in [-1, 1], block-mean pooled by ``factor``."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    H, W, C = img.shape
    if factor < 1 or H % factor or W % factor:
        raise DimensionError(f"latent factor {factor} does not divide image {H}x{W}")
    z = img.astype(np.float64) / 127.5 - 1.0
    z = z.reshape(H // factor, factor, W // factor, factor, C).mean(axis=(1, 3))
    return as_field(z)
