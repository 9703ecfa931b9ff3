"""DDPM schedule with x0-parameterized ancestral sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch


def cosine_betas(T: int, s: float = 0.008) -> torch.Tensor:
    x = torch.linspace(0, T, T + 1, dtype=torch.float64)
    abar = torch.cos(((x / T) + s) / (1 + s) * math.pi * 0.5) ** 2
    abar = abar / abar[0]
    return torch.clip(1 - abar[1:] / abar[:-1], 1e-8, 0.999)


def linear_betas(T: int) -> torch.Tensor:
    scale = 1000 / T
    return torch.linspace(scale * 1e-4, scale * 0.02, T, dtype=torch.float64)


@dataclass
class DiffusionSchedule:
    betas: torch.Tensor  # float64, T

    def __post_init__(self):
        b = self.betas = torch.as_tensor(self.betas, dtype=torch.float64)
        if b.ndim != 1 or not torch.all((b > 0) & (b < 1)):
            raise ValueError("betas must be a 1-d tensor in (0, 1)")
        self.alphas = 1 - b
        self.alpha_bars = torch.cumprod(self.alphas, 0)
        prev = torch.cat([torch.ones(1, dtype=torch.float64), self.alpha_bars[:-1]])
        self.alpha_bars_prev = prev
        self.posterior_variance = b * (1 - prev) / (1 - self.alpha_bars)
        # mu = coef_x0 * x0 + coef_xt * x_t
        self.coef_x0 = b * prev.sqrt() / (1 - self.alpha_bars)
        self.coef_xt = (1 - prev) * self.alphas.sqrt() / (1 - self.alpha_bars)

    @classmethod
    def cosine(cls, T: int = 300) -> "DiffusionSchedule":
        return cls(cosine_betas(T))

    @property
    def T(self) -> int:
        return self.betas.shape[0]

    def sigma(self, t: int) -> float:
        return float(self.posterior_variance[t].sqrt())

    def posterior_mean(self, x0, xt, t: int):
        return float(self.coef_x0[t]) * x0 + float(self.coef_xt[t]) * xt


def _gather(values: torch.Tensor, t, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long)
    out = values[t].to(like.dtype)
    return out.reshape(-1, *([1] * (like.ndim - 1))) if out.ndim else out


def forward_diffuse(x0, t, noise, schedule: DiffusionSchedule):
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise; ``t`` scalar or per-batch."""
    abar = _gather(schedule.alpha_bars, t, x0)
    return abar.sqrt() * x0 + (1 - abar).sqrt() * noise


def ancestral_sample(denoise, shape, schedule: DiffusionSchedule, generator=None, refine=None, dtype=torch.float32):
    """Run t = T-1 .. 0 with ``x0 = denoise(x_t, t)``.

    ``refine(mu, x_t, t)`` may replace the posterior mean before noise is
    added.  Aborts with the step index on any non-finite value.
    """
    x = torch.randn(shape, generator=generator, dtype=dtype)
    for t in range(schedule.T - 1, -1, -1):
        x0 = denoise(x, t)
        mu = schedule.posterior_mean(x0, x, t)
        if refine is not None:
            mu = refine(mu, x, t)
        if t > 0:
            x = mu + schedule.sigma(t) * torch.randn(shape, generator=generator, dtype=dtype)
        else:
            x = mu
        if not torch.all(torch.isfinite(x)):
            raise FloatingPointError(f"non-finite sample at denoising step {t}")
    return x
