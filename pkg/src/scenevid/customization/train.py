"""Fit a LoRA adapter to one input image plus foreground novel views."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..denoiser.codec import encode
from ..denoiser.text import PromptEmbedding, template
from ..errors import ConfigError, ContractError, TrainingError
from .lora import attach_lora
from .loss import customization_loss, customization_terms, downsample_mask, make_noised


@dataclass(frozen=True)
class CustomizationConfig:
    rank: int = 4
    lr: float = 0.5
    steps: int = 150
    lam: float = 1.0
    seed: int = 0
    draws: int = 4  # noise draws per image per step
    scale: float | None = None
    object_word: str = "sks box"
    environment_word: str = "sks field"

    def __post_init__(self):
        if self.rank < 1 or self.steps < 1 or self.draws < 1:
            raise ConfigError("rank, steps and draws must be positive")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative")

    @property
    def input_prompt(self):
        return template(self.object_word, self.environment_word)

    @property
    def view_prompt(self):
        return template(self.object_word)

    def to_dict(self):
        return asdict(self)


@dataclass
class CustomizationResult:
    adapter: object
    losses: list = field(default_factory=list)
    input_loss_before: float = float("nan")
    input_loss_after: float = float("nan")


def _latent(rgb, model):
    x = torch.as_tensor(np.asarray(rgb), dtype=model.dtype)
    if x.ndim == 3 and x.shape[-1] == 3:
        x = x.permute(2, 0, 1)
    return encode(x[None], model.spec.encode_levels)


def _embed(model, text):
    return PromptEmbedding.embed(text, model.spec.context_tokens, model.spec.context_dim).tensor(model.dtype)


def image_loss(model, rgb, prompt, mask=None, draws=16, seed=1234):
    """Denoising loss of ``model`` on one image at fixed noise draws.

    With ``mask`` (pixel resolution) only foreground latent cells count.
    """
    z0 = _latent(rgb, model).expand(draws, -1, -1, -1)
    ctx = _embed(model, prompt)[None].expand(draws, -1, -1)
    gen = torch.Generator().manual_seed(seed)
    t = torch.linspace(0, model.schedule.T - 1, draws).round().long()
    with torch.no_grad():
        if mask is None:
            batch = make_noised(model.schedule, z0, ctx, gen, t=t)
            return float(customization_loss(model, batch))
        m = downsample_mask(torch.as_tensor(np.asarray(mask))[None], model.spec.latent_hw).expand(draws, -1, -1)
        batch = make_noised(model.schedule, z0, ctx, gen, mask=m, t=t)
        dummy = make_noised(model.schedule, z0[:1], ctx[:1], torch.Generator().manual_seed(0))
        return float(customization_terms(model, dummy, batch)[1])


def train_customization(model, image, views, config: CustomizationConfig = CustomizationConfig(), log=None):
    """Attach and train an adapter with plain SGD; returns :class:`CustomizationResult`.

    ``image``: (H,W,3) input image; ``views``: list of ``(rgb, mask)`` novel
    views of the foreground. Each step uses the input image and one view
    drawn uniformly at random.
    """
    if not views:
        raise ContractError("need at least one novel view")
    z_in = _latent(image, model)
    view_lat = [_latent(rgb, model) for rgb, _ in views]
    view_mask = [downsample_mask(torch.as_tensor(np.asarray(m))[None], model.spec.latent_hw) for _, m in views]
    for i, m in enumerate(view_mask):
        if not m.any():
            raise ContractError(f"novel view {i} has an empty foreground mask at latent resolution")
    c_in = _embed(model, config.input_prompt)[None].expand(config.draws, -1, -1)
    c_fg = _embed(model, config.view_prompt)[None].expand(config.draws, -1, -1)
    result = CustomizationResult(None)
    result.input_loss_before = image_loss(model, image, config.input_prompt, seed=config.seed + 99)
    adapter = attach_lora(model, config.rank, config.scale, seed=config.seed)
    adapter.info = {"seed": config.seed, "lam": config.lam, "steps": config.steps}
    result.adapter = adapter
    opt = torch.optim.SGD(list(adapter.parameters()), lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed)
    d = config.draws
    for step in range(config.steps):
        k = int(torch.randint(0, len(views), (1,), generator=gen))
        b_in = make_noised(model.schedule, z_in.expand(d, -1, -1, -1), c_in, gen)
        b_v = make_noised(model.schedule, view_lat[k].expand(d, -1, -1, -1), c_fg, gen, mask=view_mask[k].expand(d, -1, -1))
        loss = customization_loss(model, b_in, b_v, config.lam)
        if not torch.isfinite(loss):
            raise TrainingError(f"customization loss became non-finite at step {step}", step=step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        result.losses.append(float(loss.detach()))
        if log and step % 50 == 0:
            log(f"step {step} loss {result.losses[-1]:.4f}")
    result.input_loss_after = image_loss(model, image, config.input_prompt, seed=config.seed + 99)
    return result
