"""Linear DDPM noise schedule and the epsilon-parameterised reverse step."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .field import DTYPE, as_field

DEFAULT_T = 50
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Arrays are indexed by timestep: index 0 is the clean-data convention
    (``alpha_bar[0] == 1``), indices 1..T are the diffusion steps."""

    T: int
    beta_start: float
    beta_end: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def check_t(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ParameterError(f"timestep {t} outside 1..{self.T}")
        return t

    def params(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}


def linear_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    if int(T) != T or T < 1:
        raise ParameterError(f"T must be a positive integer, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ParameterError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    T = int(T)
    beta = np.empty(T + 1)
    beta[0] = 0.0
    beta[1:] = [beta_start] if T == 1 else np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.empty(T + 1)
    alpha_bar[0] = 1.0
    for t in range(1, T + 1):
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t]
    sigma = np.zeros(T + 1)
    sigma[1:] = np.sqrt(beta[1:] * (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]))
    for arr in (beta, alpha, alpha_bar, sigma):
        arr.flags.writeable = False
    return NoiseSchedule(T, float(beta_start), float(beta_end), beta, alpha, alpha_bar, sigma)


def posterior_mean(x_t, eps_pred, t: int, s: NoiseSchedule) -> np.ndarray:
    """mu_t(x_t) = (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t)."""
    s.check_t(t)
    x_t = as_field(x_t)
    eps_pred = as_field(eps_pred)
    if x_t.shape != eps_pred.shape:
        raise DimensionError(f"x_t {x_t.shape} vs eps {eps_pred.shape}")
    eps_coef = DTYPE(s.beta[t] / np.sqrt(1.0 - s.alpha_bar[t]))
    scale = DTYPE(1.0 / np.sqrt(s.alpha[t]))
    return as_field(scale * (x_t - eps_coef * eps_pred))


def posterior_sigma(t: int, s: NoiseSchedule) -> float:
    return float(s.sigma[s.check_t(t)])
