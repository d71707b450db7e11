"""Noise schedules and the forward (noising) process.

Step-index convention: t in {0, ..., T-1}, t = 0 is the cleanest step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ConfigError, ContractError

VARIANCE_PRESERVING = "variance_preserving"
NOISE_LADDER = "noise_ladder"


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    values: np.ndarray  # alphas_bar (variance preserving) or sigmas (noise ladder)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "values", v)
        v.setflags(write=False)
        if len(v) == 0:
            raise ConfigError("schedule needs at least one step")
        if self.kind == VARIANCE_PRESERVING:
            if np.any(v <= 0) or np.any(v > 1):
                raise ConfigError("alphas_bar must lie in (0, 1]")
            if np.any(np.diff(v) >= 0):
                raise ConfigError("alphas_bar must be strictly decreasing")
            if v[0] < 1 - 1e-3:
                raise ConfigError(f"alphas_bar[0]={v[0]} must be >= 1 - 1e-3")
        elif self.kind == NOISE_LADDER:
            if np.any(np.diff(v) >= 0):
                raise ConfigError("sigmas must be strictly decreasing")
            if v[-1] < 0:
                raise ConfigError("sigma_min must be >= 0")
        else:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")

    @property
    def T(self):
        return len(self.values)

    @property
    def alphas_bar(self):
        if self.kind != VARIANCE_PRESERVING:
            raise ContractError("noise ladder has no alphas_bar")
        return self.values

    @property
    def sigmas(self):
        if self.kind == NOISE_LADDER:
            return self.values
        return np.sqrt((1.0 - self.values) / self.values)

    @classmethod
    def scaled_linear(cls, T=1000, beta_start=0.00085, beta_end=0.012):
        betas = np.linspace(beta_start**0.5, beta_end**0.5, T) ** 2
        return cls(VARIANCE_PRESERVING, np.cumprod(1.0 - betas))

    @classmethod
    def karras(cls, steps, sigma_min=0.002, sigma_max=15.0, rho=7.0):
        """EDM ladder of ``steps + 1`` decreasing noise levels ending at sigma_min."""
        if steps < 1:
            raise ConfigError("karras ladder needs steps >= 1")
        ramp = np.linspace(0.0, 1.0, steps + 1)
        inv = sigma_max ** (1 / rho) + ramp * (sigma_min ** (1 / rho) - sigma_max ** (1 / rho))
        return cls(NOISE_LADDER, inv**rho)

    def noise_level(self, t):
        """Equivalent VE noise level sigma for step ``t``."""
        return float(self.sigmas[t])

    def check_step(self, t):
        if not (isinstance(t, (int, np.integer)) and 0 <= t < self.T):
            raise ContractError(f"step index {t!r} outside [0, {self.T})")


def add_noise(schedule: NoiseSchedule, z0, t, eps):
    """z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps   or   z0 + sigma_t eps."""
    if tuple(eps.shape) != tuple(z0.shape):
        raise ContractError(f"noise shape {tuple(eps.shape)} != latent shape {tuple(z0.shape)}")
    if isinstance(t, torch.Tensor) and t.ndim == 1:
        vals = torch.tensor(schedule.values, dtype=z0.dtype)[t].view(-1, *([1] * (z0.ndim - 1)))
        if schedule.kind == VARIANCE_PRESERVING:
            return vals.sqrt() * z0 + (1 - vals).sqrt() * eps
        return z0 + vals * eps
    schedule.check_step(int(t))
    v = schedule.values[int(t)]
    if schedule.kind == VARIANCE_PRESERVING:
        if v == 1.0:
            return z0.clone() if isinstance(z0, torch.Tensor) else np.array(z0, copy=True)
        return math.sqrt(v) * z0 + math.sqrt(1.0 - v) * eps
    return z0 + v * eps
