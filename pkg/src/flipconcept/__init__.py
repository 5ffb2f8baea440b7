"""Tuning-free multi-concept image blending on an edit-friendly DDPM inversion."""

__version__ = "0.1.0"

from .attention import GuidanceConfig, make_guided_tap, value_guidance
from .denoiser import AttentionTap, Denoiser, PromptEmbedding, build_denoiser, embed_prompt, predict_noise
from .field import Rng, axpy, hadamard, matmul, randn, softmax_rows
from .inversion import NoiseMapTrack, ddim_invert, extract_noise_maps, invert, noising_path, replay
from .masks import background_mask, downsample_mask, expanded_box_mask, load_mask, save_mask
from .pipeline import ABLATIONS, BlendConfig, BlendState, ConceptInput, Stages, decode, generate, prepare, step
from .schedule import NoiseSchedule, linear_schedule, posterior_mean, posterior_sigma
