"""Single-image plus masked multi-view denoising objective."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from ..diffusion.schedule import add_noise
from ..errors import ContractError


@dataclass
class NoisedBatch:
    """Noised latents with the noise that produced them.

    ``mask`` (augmented views only) is boolean at latent resolution,
    shaped (B, h, w) or (B, 1, h, w).
    """

    z_t: torch.Tensor
    eps: torch.Tensor
    t: torch.Tensor
    cond: object = None
    mask: torch.Tensor | None = None


def downsample_mask(mask, latent_hw):
    """Area-average a pixel mask down to ``latent_hw``, then threshold at 0.5."""
    m = torch.as_tensor(mask)
    lead = m.shape[:-2]
    m = m.reshape(-1, 1, *m.shape[-2:]).to(torch.float64)
    h, w = latent_hw
    if m.shape[-2] % h or m.shape[-1] % w:
        raise ContractError(f"mask size {tuple(m.shape[-2:])} is not a multiple of {latent_hw}")
    avg = F.avg_pool2d(m, (m.shape[-2] // h, m.shape[-1] // w))
    return (avg >= 0.5).reshape(*lead, h, w)


def make_noised(schedule, x0, cond, generator, mask=None, t=None):
    n = x0.shape[0]
    if t is None:
        t = torch.randint(0, schedule.T, (n,), generator=generator)
    eps = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)
    return NoisedBatch(add_noise(schedule, x0, t, eps), eps, t, cond, mask)


def _mask_for(batch, like):
    m = batch.mask
    if m is None:
        raise ContractError("augmented batch needs a foreground mask")
    m = torch.as_tensor(m).bool()
    if m.ndim == like.ndim - 1:
        m = m[:, None]
    if m.shape[-2:] != like.shape[-2:]:
        raise ContractError(f"mask {tuple(m.shape[-2:])} must be at latent resolution {tuple(like.shape[-2:])}")
    if not m.any():
        raise ContractError("foreground mask is empty")
    return m.expand_as(like)


def customization_terms(denoiser, input_batch: NoisedBatch, aug_batch: NoisedBatch | None):
    """``(input_term, masked_view_term)``; the second is None without a view batch.

    The input term is a mean over all elements; the view term a mean over
    elements inside the mask only.
    """
    eps_hat = denoiser(input_batch.z_t, input_batch.t, input_batch.cond)
    term_in = (input_batch.eps - eps_hat).pow(2).mean()
    if aug_batch is None:
        return term_in, None
    m = _mask_for(aug_batch, aug_batch.z_t)
    eps_hat_v = denoiser(aug_batch.z_t, aug_batch.t, aug_batch.cond)
    r2 = (aug_batch.eps - eps_hat_v).pow(2)
    term_v = torch.where(m, r2, torch.zeros_like(r2)).sum() / m.sum()
    return term_in, term_v


def customization_loss(denoiser, input_batch, aug_batch=None, lam=1.0):
    if lam < 0:
        raise ContractError("augmentation weight must be nonnegative")
    term_in, term_v = customization_terms(denoiser, input_batch, aug_batch)
    if term_v is None:
        return term_in
    return term_in + lam * term_v
