"""Exact latent codec: space-to-channel rearrangement of RGB images."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ContractError


def _as_batch(image):
    x = torch.as_tensor(np.asarray(image)) if not torch.is_tensor(image) else image
    if x.ndim == 3 and x.shape[-1] in (1, 3, 4) and x.shape[0] not in (1, 3, 4):
        x = x.permute(2, 0, 1)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ContractError(f"expected an image (H,W,3), (3,H,W) or (B,3,H,W), got {tuple(x.shape)}")


def encode(image, levels=1):
    """Image in [0,1] -> latent with ``4**levels`` times the channels.

    A pure rearrangement, so ``decode(encode(x))`` reproduces ``x`` bit for
    bit. Accepts HWC arrays, CHW or BCHW tensors; the batch axis is kept.
    """
    x, single = _as_batch(image)
    if not torch.is_floating_point(x):
        raise ContractError("encode expects a floating-point image in [0,1]")
    f = 2**levels
    if x.shape[-1] % f or x.shape[-2] % f:
        raise ContractError(f"image size {tuple(x.shape[-2:])} not divisible by {f}")
    z = F.pixel_unshuffle(x, f) if levels else x.clone()
    return z[0] if single else z


def decode(latent, levels=1):
    """Inverse of :func:`encode`; returns CHW or BCHW."""
    z = latent[None] if latent.ndim == 3 else latent
    f = 2**levels
    if z.shape[1] % (f * f):
        raise ContractError(f"latent channels {z.shape[1]} not divisible by {f * f}")
    x = F.pixel_shuffle(z, f) if levels else z.clone()
    return x[0] if latent.ndim == 3 else x


def to_hwc(image):
    """CHW tensor -> HWC float numpy array clipped to [0,1]."""
    return image.detach().clamp(0, 1).permute(1, 2, 0).cpu().numpy()
