"""Untrained patch-transformer noise predictor with self-attention tap points.

The network never learns anything. It exists so the attention and latent
surgery in the blend pipeline runs against a real eps(z_t, t, c) with
genuine Q/K/V projections, and so that every contract can be checked
bitwise.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, ParameterError
from .field import DTYPE, Rng, as_field, matmul, softmax_rows

RECORD = "record"
REPLACE_KV = "replace_kv"
PASSTHROUGH = "passthrough"
_MODES = (RECORD, REPLACE_KV, PASSTHROUGH)

# order in which each block's weights are drawn from the build Rng
BLOCK_WEIGHTS = ("wq", "wk", "wv", "wo", "w1", "w2")


@dataclass(eq=False)
class Denoiser:
    seed: int
    patch_size: int
    embed_dim: int
    n_blocks: int
    channels: int
    w_in: np.ndarray
    blocks: list
    w_head: np.ndarray

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def weights(self):
        """Every weight field in draw order."""
        yield self.w_in
        for blk in self.blocks:
            for name in BLOCK_WEIGHTS:
                yield blk[name]
        yield self.w_head


@dataclass(frozen=True, eq=False)
class PromptEmbedding:
    tokens: tuple
    vectors: np.ndarray  # one row per token

    @property
    def vector(self) -> np.ndarray:
        if len(self.tokens) == 0:
            return np.zeros(self.vectors.shape[1], dtype=DTYPE)
        return as_field(self.vectors.astype(np.float64).mean(axis=0))


@dataclass(eq=False)
class AttentionTap:
    """Per-call interception of every block's self-attention K and V.

    ``record`` appends ``(K, V)`` per block to ``recorded``. ``replace_kv``
    swaps in ``override[b]``; when ``value_guidance_alpha`` is set the
    override V is treated as V_per and guided against the block's own V.
    """

    mode: str = PASSTHROUGH
    recorded: list = field(default_factory=list)
    override: Optional[list] = None
    value_guidance_alpha: Optional[float] = None

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ParameterError(f"unknown tap mode {self.mode!r}")
        if self.mode == REPLACE_KV and self.override is None:
            raise ParameterError("replace_kv tap needs override K,V per block")

    @classmethod
    def record(cls) -> "AttentionTap":
        return cls(mode=RECORD)

    @classmethod
    def replace(cls, override, alpha=None) -> "AttentionTap":
        return cls(mode=REPLACE_KV, override=list(override), value_guidance_alpha=alpha)


def tokenize(prompt) -> tuple:
    if isinstance(prompt, str):
        return tuple(prompt.lower().split())
    return tuple(prompt)


def token_seed(token: str) -> int:
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")


def embed_prompt(prompt, embed_dim: int = 32) -> PromptEmbedding:
    tokens = tokenize(prompt)
    rows = [Rng(token_seed(tok)).randn((embed_dim,)) for tok in tokens]
    vectors = np.stack(rows) if rows else np.zeros((0, embed_dim), dtype=DTYPE)
    return PromptEmbedding(tokens, as_field(vectors))


def build_denoiser(
    seed: int = 0,
    patch_size: int = 4,
    embed_dim: int = 32,
    n_blocks: int = 2,
    channels: int = 1,
    n_heads: int = 1,
) -> Denoiser:
    if patch_size < 1 or embed_dim < 2 or n_blocks < 0 or channels < 1:
        raise ParameterError("patch_size, embed_dim, n_blocks and channels must be positive")
    if n_heads != 1 or embed_dim % n_heads or embed_dim % 2:
        raise ParameterError("only a single head with an even embed_dim is supported")
    rng = Rng(seed)
    p_dim = patch_size * patch_size * channels

    def draw(rows, cols):
        return as_field(rng.randn((rows, cols)) / np.float32(np.sqrt(rows)))

    w_in = draw(p_dim, embed_dim)
    blocks = [{name: draw(embed_dim, embed_dim) for name in BLOCK_WEIGHTS} for _ in range(n_blocks)]
    w_head = draw(embed_dim, p_dim)
    return Denoiser(int(seed), patch_size, embed_dim, n_blocks, channels, w_in, blocks, w_head)


def time_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = float(t) * freqs
    return as_field(np.concatenate([np.sin(ang), np.cos(ang)]))


def _layer_norm(h: np.ndarray) -> np.ndarray:
    h64 = h.astype(np.float64)
    mu = h64.mean(axis=1, keepdims=True)
    var = h64.var(axis=1, keepdims=True)
    return as_field((h64 - mu) / np.sqrt(var + 1e-5))


def patchify(z: np.ndarray, p: int) -> np.ndarray:
    H, W, C = z.shape
    return np.ascontiguousarray(
        z.reshape(H // p, p, W // p, p, C).transpose(0, 2, 1, 3, 4).reshape(-1, p * p * C)
    )


def unpatchify(tokens: np.ndarray, shape: Sequence[int], p: int) -> np.ndarray:
    H, W, C = shape
    return np.ascontiguousarray(
        tokens.reshape(H // p, W // p, p, p, C).transpose(0, 2, 1, 3, 4).reshape(H, W, C)
    )


def _self_attention(x: np.ndarray, blk: dict, b: int, tap: Optional[AttentionTap]) -> np.ndarray:
    q = matmul(x, blk["wq"])
    k = matmul(x, blk["wk"])
    v = matmul(x, blk["wv"])
    if tap is not None and tap.mode == RECORD:
        tap.recorded.append((k.copy(), v.copy()))
    elif tap is not None and tap.mode == REPLACE_KV:
        if b >= len(tap.override):
            raise DimensionError(f"tap override has {len(tap.override)} blocks, need block {b}")
        k_new, v_new = (as_field(a) for a in tap.override[b])
        if k_new.shape != k.shape or v_new.shape != v.shape:
            raise DimensionError(
                f"block {b}: override K,V {k_new.shape},{v_new.shape} vs {k.shape},{v.shape}"
            )
        if tap.value_guidance_alpha is not None:
            from .attention import value_guidance

            v_new = value_guidance(v_new, v, tap.value_guidance_alpha)
        k, v = k_new, v_new
    scores = matmul(q, k.T) * DTYPE(1.0 / np.sqrt(k.shape[1]))
    return matmul(softmax_rows(scores), v)


def predict_noise(
    d: Denoiser,
    z_t,
    t: int,
    cond: Optional[PromptEmbedding] = None,
    tap: Optional[AttentionTap] = None,
) -> np.ndarray:
    z_t = as_field(z_t)
    if z_t.ndim != 3:
        raise DimensionError(f"latent must be H x W x C, got shape {z_t.shape}")
    H, W, C = z_t.shape
    p = d.patch_size
    if H % p or W % p or C != d.channels:
        raise DimensionError(
            f"latent {z_t.shape} incompatible with patch {p} and {d.channels} channels"
        )
    if cond is not None and cond.vectors.shape[1] != d.embed_dim:
        raise DimensionError(f"cond dim {cond.vectors.shape[1]} != embed_dim {d.embed_dim}")
    h = matmul(patchify(z_t, p), d.w_in)
    h = h + time_embedding(t, d.embed_dim)
    if cond is not None:
        h = h + cond.vector
    for b, blk in enumerate(d.blocks):
        h = h + matmul(_self_attention(_layer_norm(h), blk, b, tap), blk["wo"])
        h = h + matmul(np.tanh(matmul(_layer_norm(h), blk["w1"])), blk["w2"])
    out = matmul(_layer_norm(h), d.w_head)
    return unpatchify(out, z_t.shape, p)
