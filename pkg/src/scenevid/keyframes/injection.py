"""Masked replay of traced conv features and self-attention q/k during sampling."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
import torch

from ..customization.loss import downsample_mask
from ..diffusion.hooks import TapHooks
from ..errors import ConfigError, ContractError


@dataclass(frozen=True)
class InjectionConfig:
    """Injection is active while ``t / T >= tau`` (the high-noise part of sampling).

    ``conv_taps`` / ``sa_taps`` of None mean every declared tap of that kind.
    """

    tau_conv: float = 0.4
    tau_sa: float = 0.0
    conv_taps: tuple | None = None
    sa_taps: tuple | None = None

    def __post_init__(self):
        for name in ("tau_conv", "tau_sa"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")

    def resolve(self, denoiser):
        conv = tuple(denoiser.spec.conv_taps if self.conv_taps is None else self.conv_taps)
        sa = tuple(denoiser.spec.attn_taps if self.sa_taps is None else self.sa_taps)
        bad = [t for t in conv if t not in denoiser.spec.conv_taps] + [t for t in sa if t not in denoiser.spec.attn_taps]
        if bad:
            raise ConfigError(f"unknown tap ids {bad}")
        return conv, sa


def tap_masks(visible, spec, taps):
    """Per-tap boolean masks from pixel visibility (F, H, W).

    Conv taps get (F, 1, h, w); attention taps (F, h*w, 1) in token order.
    """
    vis = torch.as_tensor(np.asarray(visible)).bool()
    if vis.ndim == 2:
        vis = vis[None]
    out = {}
    for tap in taps:
        level = int(tap.split(".")[0][2:])
        hw = spec.level_hw(level)
        m = downsample_mask(vis, hw)
        out[tap] = m[:, None] if tap.endswith(".conv") else m.reshape(m.shape[0], -1, 1)
    return out


class FeatureInjector:
    """Callable ``(step, t) -> TapHooks`` replaying a trace through masks.

    The normalized timestep is ``t / T`` unless ``frac_fn`` maps the call's
    step key to it (noise-ladder indices count downward in noise).

    ``visible`` is the per-frame pixel mask where injection is allowed (the
    complement of the invisible region). ``firings`` counts overrides per tap.
    """

    def __init__(self, trace, config: InjectionConfig, denoiser, visible, T, processor=None, frac_fn=None):
        self.trace = trace
        self.frac_fn = frac_fn
        self.config = config
        self.conv_taps, self.sa_taps = config.resolve(denoiser)
        self.masks = tap_masks(visible, denoiser.spec, self.conv_taps + self.sa_taps)
        self.T = T
        self.processor = processor
        self.firings = Counter()

    def active(self, t):
        frac = self.frac_fn(t) if self.frac_fn else t / self.T
        return frac >= self.config.tau_conv, frac >= self.config.tau_sa

    def _value(self, t, tap):
        try:
            return self.trace.get(t, tap)
        except ContractError:
            raise ContractError(f"trace has no entry for step {t}, tap {tap!r}") from None

    def __call__(self, step, t):
        conv_on, sa_on = self.active(t)
        conv_hook = attn_hook = None
        if conv_on and self.conv_taps:
            vals = {tap: self._value(t, tap) for tap in self.conv_taps}

            def conv_hook(tap, x):
                if tap not in vals:
                    return x
                self.firings[tap] += 1
                m = self.masks[tap].to(x.device)
                return torch.where(m, vals[tap].to(x.dtype), x)

        if sa_on and self.sa_taps:
            pairs = {tap: self._value(t, tap) for tap in self.sa_taps}

            def attn_hook(tap, q, k):
                if tap not in pairs:
                    return q, k
                self.firings[tap] += 1
                m = self.masks[tap].to(q.device)
                tq, tk = pairs[tap]
                return torch.where(m, tq.to(q.dtype), q), torch.where(m, tk.to(k.dtype), k)

        return TapHooks(conv=conv_hook, attn=attn_hook, processor=self.processor)


def inject_features(t, trace, config: InjectionConfig, denoiser, visible, T, step=0):
    """Hook bundle for a single sampling call at step ``t``."""
    return FeatureInjector(trace, config, denoiser, visible, T)(step, t)


def expected_firings(timesteps, tau, n_taps, T):
    """Number of overrides for sampling over ``timesteps`` (descending calls)."""
    return sum(1 for t in timesteps if t / T >= tau) * n_taps
