"""Seeded denoising-score-matching training for the toy denoisers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from ..diffusion.schedule import add_noise
from ..errors import ConfigError, ContractError, TrainingError
from .data import DenoisingData
from .text import embed_batch
from .unet import DenoiserSpec, ImageDenoiser, VideoDenoiser


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch: int = 16
    lr: float = 2e-3
    seed: int = 0
    control_dropout: float = 0.2  # share of samples trained without depth control
    prompt_dropout: float = 0.1
    grad_clip: float = 1.0
    warmup: int = 50
    heldout: int = 8

    def __post_init__(self):
        if self.steps < 0 or self.batch < 1 or not self.lr > 0:
            raise ConfigError(f"bad training config {self}")


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    heldout_before: float = float("nan")
    heldout_after: float = float("nan")


def build_image_denoiser(spec: DenoiserSpec = None, seed=0, control=True):
    torch.manual_seed(seed)
    model = ImageDenoiser(spec or DenoiserSpec())
    if control:
        model.attach_control()
    return model


def build_video_denoiser(spec: DenoiserSpec = None, seed=0, control=True, ladder=None):
    torch.manual_seed(seed)
    model = VideoDenoiser(spec or DenoiserSpec(temporal=True), ladder)
    if control:
        model.attach_control()
    return model


def _contexts(model, data):
    s = model.spec
    return embed_batch(data.prompts, s.context_tokens, s.context_dim, dtype=model.dtype)


def _keep_mask(n, p, gen, dtype):
    return (torch.rand(n, generator=gen) >= p).to(dtype)


def denoising_loss(model, latents, ctx, depth, gen, control_dropout=0.0, prompt_dropout=0.0):
    """Mean of ``||eps - eps_hat||^2`` over a batch with randomly drawn noise.

    All randomness comes from ``gen`` so the loss is a deterministic function
    of the weights for a fixed generator state.
    """
    dtype = model.dtype
    x = latents.to(dtype)
    n = x.shape[0]
    if prompt_dropout > 0:
        null = embed_batch([""], model.spec.context_tokens, model.spec.context_dim, dtype=dtype)
        keep = _keep_mask(n, prompt_dropout, gen, dtype)[:, None, None]
        ctx = ctx * keep + null * (1 - keep)
    control_keep = None
    if model.control_branch is not None and depth is not None:
        control_keep = _keep_mask(n, control_dropout, gen, dtype)
    if isinstance(model, VideoDenoiser):
        b, f = x.shape[:2]
        flip = torch.rand(b, generator=gen) < 0.5
        x = torch.where(flip[:, None, None, None, None], x.flip(1), x)
        if depth is not None:
            depth = torch.where(flip[:, None, None, None], depth.flip(1), depth)
        lo, hi = math.log(model.ladder.sigmas[-1]), math.log(model.ladder.sigmas[0])
        sigma = torch.exp(lo + (hi - lo) * torch.rand(b, generator=gen, dtype=dtype))
        eps = torch.randn(x.shape, generator=gen, dtype=dtype)
        z = x + sigma[:, None, None, None, None] * eps
        control = None
        if control_keep is not None:
            res = model.control_branch(depth.reshape(b * f, *depth.shape[2:]))
            k = control_keep.repeat_interleave(f)[:, None, None, None]
            control = type(res)(tuple(r * k for r in res.skips), res.mid * k)
        pred = model.forward_sigma(z, sigma, ctx, control=control, image_cond=x[:, 0])
    else:
        t = torch.randint(0, model.schedule.T, (n,), generator=gen)
        eps = torch.randn(x.shape, generator=gen, dtype=dtype)
        z = add_noise(model.schedule, x, t, eps)
        control = None
        if control_keep is not None:
            res = model.control_branch(depth)
            k = control_keep[:, None, None, None]
            control = type(res)(tuple(r * k for r in res.skips), res.mid * k)
        pred = model(z, t, ctx, control=control)
    return (pred - eps).pow(2).mean()


def _heldout_loss(model, data, ctx, idx, seed):
    gen = torch.Generator().manual_seed(seed + 7919)
    with torch.no_grad():
        depth = data.depth[idx] if data.depth is not None else None
        return float(denoising_loss(model, data.latents[idx], ctx[idx], depth, gen))


def train_denoiser(model, data: DenoisingData, config: TrainConfig = TrainConfig(), log=None):
    """Train ``model`` in place with Adam; returns a :class:`TrainResult`.

    The last ``config.heldout`` samples are kept out of training when the
    dataset is large enough, and serve to measure held-out loss.
    """
    if len(data) == 0:
        raise ContractError("training dataset is empty")
    if data.is_video != isinstance(model, VideoDenoiser):
        raise ContractError("video data needs the video denoiser and vice versa")
    n = len(data)
    if n > 2 * config.heldout:
        train_idx, held_idx = torch.arange(n - config.heldout), torch.arange(n - config.heldout, n)
    else:
        train_idx = held_idx = torch.arange(n)
    ctx = _contexts(model, data)
    result = TrainResult()
    result.heldout_before = _heldout_loss(model, data, ctx, held_idx, config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    warm = max(config.warmup, 1)
    total = max(config.steps, 1)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: min(1.0, (s + 1) / warm) * 0.5 * (1 + math.cos(math.pi * min(s, total) / total))
    )
    model.train()
    for step in range(config.steps):
        pick = train_idx[torch.randint(0, len(train_idx), (config.batch,), generator=gen)]
        depth = data.depth[pick] if data.depth is not None else None
        loss = denoising_loss(model, data.latents[pick], ctx[pick], depth, gen, config.control_dropout, config.prompt_dropout)
        if not torch.isfinite(loss):
            raise TrainingError(f"training loss became non-finite at step {step}", step=step)
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        opt.step()
        sched.step()
        result.losses.append(float(loss.detach()))
        if log and (step % 100 == 0 or step == config.steps - 1):
            log(f"step {step} loss {result.losses[-1]:.4f}")
    model.eval()
    result.heldout_after = _heldout_loss(model, data, ctx, held_idx, config.seed)
    model.train_info = {"seed": config.seed, "steps": config.steps, "heldout_after": result.heldout_after}
    return result
