"""Toy UNet denoisers for images (VP steps) and videos (noise-ladder levels)."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from ..diffusion.hooks import TapHooks
from ..diffusion.schedule import NoiseSchedule
from ..errors import ConfigError, ContractError
from .layers import ResBlock, TemporalAttention, TransformerBlock, groups_for, timestep_embedding
from .text import PromptEmbedding


@dataclass(frozen=True)
class DenoiserSpec:
    latent_channels: int = 12
    latent_hw: tuple = (16, 16)
    widths: tuple = (32, 48)
    attn_levels: tuple = (0, 1)
    context_dim: int = 32
    context_tokens: int = 8
    heads: int = 2
    temporal: bool = False
    max_frames: int = 16
    time_dim: int = 64
    encode_levels: int = 1  # codec levels between image and latent

    def __post_init__(self):
        object.__setattr__(self, "latent_hw", tuple(self.latent_hw))
        object.__setattr__(self, "widths", tuple(self.widths))
        object.__setattr__(self, "attn_levels", tuple(sorted(set(self.attn_levels))))
        n = len(self.widths)
        if n < 1:
            raise ConfigError("need at least one resolution level")
        if not self.attn_levels:
            raise ConfigError("at least one self-attention level is required")
        if any(l < 0 or l >= n for l in self.attn_levels):
            raise ConfigError(f"attention levels {self.attn_levels} outside 0..{n - 1}")
        f = 2 ** (n - 1)
        if self.latent_hw[0] % f or self.latent_hw[1] % f:
            raise ConfigError(f"latent size {self.latent_hw} not divisible by {f}")
        for w in self.widths:
            if w % self.heads:
                raise ConfigError(f"width {w} not divisible by {self.heads} heads")

    @property
    def levels(self):
        return len(self.widths)

    def level_hw(self, level):
        return (self.latent_hw[0] >> level, self.latent_hw[1] >> level)

    @property
    def image_hw(self):
        f = 2**self.encode_levels
        return (self.latent_hw[0] * f, self.latent_hw[1] * f)

    @property
    def conv_taps(self):
        return tuple(f"up{l}.conv" for l in reversed(range(self.levels)))

    @property
    def attn_taps(self):
        return tuple(f"up{l}.attn" for l in reversed(self.attn_levels))

    @property
    def tap_ids(self):
        return self.conv_taps + self.attn_taps

    def tap_shapes(self):
        out = {}
        for l in range(self.levels):
            h, w = self.level_hw(l)
            out[f"up{l}.conv"] = (self.widths[l], h, w)
            if l in self.attn_levels:
                out[f"up{l}.attn"] = ((h * w, self.widths[l]), (h * w, self.widths[l]))
        return out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ControlResidualSet:
    """Residuals to add at each encoder level (skip tensors) and the middle block."""

    skips: tuple
    mid: torch.Tensor

    def scaled(self, s):
        return ControlResidualSet(tuple(r * s for r in self.skips), self.mid * s)

    def is_zero(self):
        return all(bool((r == 0).all()) for r in (*self.skips, self.mid))


def normalize_depth(depth):
    """Camera depth -> 1/(1+z) in (0,1]; pixels without geometry (z=0) map to 0."""
    depth = torch.as_tensor(depth, dtype=torch.float32) if not torch.is_tensor(depth) else depth
    return torch.where(depth > 0, 1.0 / (1.0 + depth.clamp(min=0)), torch.zeros_like(depth))


class ControlBranch(nn.Module):
    """Depth encoder producing zero-initialized residuals for the UNet encoder."""

    def __init__(self, spec: DenoiserSpec, hidden=16):
        super().__init__()
        self.spec = spec
        stem = []
        ch = 1
        for _ in range(spec.encode_levels):
            stem += [nn.Conv2d(ch, hidden, 3, padding=1), nn.SiLU(), nn.Conv2d(hidden, hidden, 3, stride=2, padding=1), nn.SiLU()]
            ch = hidden
        self.stem = nn.Sequential(*stem)
        self.blocks = nn.ModuleList()
        self.proj = nn.ModuleList()
        for l, w in enumerate(spec.widths):
            stride = 1 if l == 0 else 2
            self.blocks.append(nn.Sequential(nn.Conv2d(ch, w, 3, stride=stride, padding=1), nn.SiLU(), nn.Conv2d(w, w, 3, padding=1), nn.SiLU()))
            self.proj.append(nn.Conv2d(w, w, 1))
            ch = w
        self.mid_proj = nn.Conv2d(ch, ch, 1)
        for p in [*self.proj, self.mid_proj]:
            nn.init.zeros_(p.weight)
            nn.init.zeros_(p.bias)

    def forward(self, depth, strength=1.0):
        """``depth``: raw camera depth (B,H,W) or (B,1,H,W) at image resolution."""
        d = depth if torch.is_tensor(depth) else torch.as_tensor(depth)
        if d.ndim == 2:
            d = d[None]
        if d.ndim == 3:
            d = d[:, None]
        dtype = next(self.parameters()).dtype
        h = self.stem(normalize_depth(d.to(dtype)))
        skips = []
        for block, proj in zip(self.blocks, self.proj):
            h = block(h)
            skips.append(proj(h))
        res = ControlResidualSet(tuple(skips), self.mid_proj(h))
        return res if strength == 1.0 else res.scaled(strength)


class ToyUNet(nn.Module):
    """Shared backbone; predicts noise from a unit-scaled input and log-sigma."""

    def __init__(self, spec: DenoiserSpec):
        super().__init__()
        self.spec = spec
        w = spec.widths
        td = spec.time_dim
        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.conv_in = nn.Conv2d(spec.latent_channels, w[0], 3, padding=1)
        if spec.temporal:
            self.cond_in = nn.Conv2d(spec.latent_channels, w[0], 3, padding=1)
            nn.init.zeros_(self.cond_in.weight)
            nn.init.zeros_(self.cond_in.bias)
        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleDict()
        self.downsample = nn.ModuleList()
        prev = w[0]
        for l in range(spec.levels):
            self.down_res.append(ResBlock(prev, w[l], td))
            if l in spec.attn_levels:
                self.down_attn[str(l)] = TransformerBlock(w[l], spec.context_dim, spec.heads, tap_id=None)
            if l < spec.levels - 1:
                self.downsample.append(nn.Conv2d(w[l], w[l + 1], 3, stride=2, padding=1))
            prev = w[l + 1] if l < spec.levels - 1 else w[l]
        top = w[-1]
        self.mid_res = ResBlock(top, top, td)
        self.mid_attn = TransformerBlock(top, spec.context_dim, spec.heads, tap_id=None)
        self.up_res = nn.ModuleDict()
        self.up_attn = nn.ModuleDict()
        self.up_temporal = nn.ModuleDict()
        self.upsample = nn.ModuleDict()
        for l in reversed(range(spec.levels)):
            self.up_res[str(l)] = ResBlock(2 * w[l], w[l], td)
            if l in spec.attn_levels:
                self.up_attn[str(l)] = TransformerBlock(w[l], spec.context_dim, spec.heads, tap_id=f"up{l}.attn")
            if spec.temporal:
                self.up_temporal[str(l)] = TemporalAttention(w[l], spec.max_frames, spec.heads)
            if l > 0:
                self.upsample[str(l)] = nn.Conv2d(w[l], w[l - 1], 3, padding=1)
        self.norm_out = nn.GroupNorm(groups_for(w[0]), w[0])
        self.conv_out = nn.Conv2d(w[0], spec.latent_channels, 3, padding=1)

    def forward(self, x, c_noise, context, control=None, hooks=None, image_cond=None, n_frames=1):
        spec = self.spec
        hooks = hooks or TapHooks()
        temb = self.time_mlp(timestep_embedding(c_noise, spec.time_dim))
        h = self.conv_in(x)
        if image_cond is not None:
            if not spec.temporal:
                raise ContractError("image_cond needs the video denoiser")
            h = h + self.cond_in(image_cond)
        skips = []
        for l in range(spec.levels):
            h = self.down_res[l](h, temb)
            if str(l) in self.down_attn:
                h = self.down_attn[str(l)](h, context)
            skips.append(h if control is None else h + control.skips[l])
            if l < spec.levels - 1:
                h = self.downsample[l](h)
        h = self.mid_attn(self.mid_res(h, temb), context)
        if control is not None:
            h = h + control.mid
        for l in reversed(range(spec.levels)):
            h = self.up_res[str(l)](torch.cat([h, skips[l]], dim=1), temb)
            tap = f"up{l}.conv"
            if hooks.conv is not None:
                h = hooks.conv(tap, h)
            if hooks.recorder is not None:
                hooks.recorder[tap] = h
            if str(l) in self.up_attn:
                h = self.up_attn[str(l)](h, context, hooks=hooks)
            if str(l) in self.up_temporal:
                h = self.up_temporal[str(l)](h, n_frames)
            if l > 0:
                h = self.upsample[str(l)](F.interpolate(h, scale_factor=2.0, mode="nearest"))
        return self.conv_out(F.silu(self.norm_out(h)))


DATA_MEAN = 0.5
SIGMA_DATA = 0.5


def c_noise_of(sigma):
    return torch.log(sigma) / 4.0


class _DenoiserBase(nn.Module):
    def __init__(self, spec: DenoiserSpec):
        super().__init__()
        self.spec = spec
        self.core = ToyUNet(spec)
        self.control_branch = None
        self.train_info = {}

    @property
    def tap_ids(self):
        return self.spec.tap_ids

    def tap_shapes(self):
        return self.spec.tap_shapes()

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    def attach_control(self, branch=None):
        self.control_branch = branch if branch is not None else ControlBranch(self.spec).to(self.dtype)
        return self.control_branch

    def control_from_depth(self, depth, strength=1.0):
        if self.control_branch is None:
            raise ContractError("no control branch attached")
        return self.control_branch(depth, strength)

    def context(self, cond, batch):
        dim, n = self.spec.context_dim, self.spec.context_tokens
        if cond is None:
            cond = PromptEmbedding.embed("", n, dim)
        if isinstance(cond, PromptEmbedding):
            cond = cond.tensor()
        cond = cond.to(self.dtype)
        if cond.ndim == 2:
            cond = cond[None].expand(batch, -1, -1)
        if cond.shape[0] == 1 and batch > 1:
            cond = cond.expand(batch, -1, -1)
        if tuple(cond.shape) != (batch, n, dim):
            raise ContractError(f"context shape {tuple(cond.shape)} != {(batch, n, dim)}")
        return cond

    def _check_latent(self, z):
        want = (self.spec.latent_channels, *self.spec.latent_hw)
        if tuple(z.shape[-3:]) != want:
            raise ContractError(f"latent shape {tuple(z.shape[-3:])} != {want}")

    def predict(self, x, sigma, cond=None, control=None, hooks=None, image_cond=None, n_frames=1):
        """Noise prediction for ``x = x0 + sigma * eps`` (exploding form).

        ``x`` is (N, C, h, w) with N a multiple of ``n_frames``; ``sigma`` is a
        scalar or per-sample tensor of length N. The backbone output F is
        preconditioned around the data mean: the clean estimate is
        ``c_skip * x + c_out * F(c_in * x)`` and the returned noise follows
        from it.
        """
        self._check_latent(x)
        n = x.shape[0]
        sigma = torch.as_tensor(sigma, dtype=x.dtype).reshape(-1)
        sigma = sigma.expand(n) if sigma.numel() == 1 else sigma
        if sigma.numel() != n:
            raise ContractError(f"need one noise level per sample, got {sigma.numel()} for {n}")
        s = sigma[:, None, None, None]
        sd2 = SIGMA_DATA**2
        xc = x - DATA_MEAN
        if image_cond is not None:
            image_cond = (image_cond - DATA_MEAN) / SIGMA_DATA
        out = self.core(
            xc / torch.sqrt(s**2 + sd2),
            c_noise_of(sigma),
            self.context(cond, n),
            control=control,
            hooks=hooks,
            image_cond=image_cond,
            n_frames=n_frames,
        )
        return s / (s**2 + sd2) * xc - SIGMA_DATA / torch.sqrt(s**2 + sd2) * out


class ImageDenoiser(_DenoiserBase):
    """Noise predictor over a variance-preserving schedule (integer steps)."""

    def __init__(self, spec: DenoiserSpec = DenoiserSpec(), schedule: NoiseSchedule = None):
        if spec.temporal:
            raise ConfigError("image denoiser takes a spec without temporal attention")
        super().__init__(spec)
        self.schedule = schedule or NoiseSchedule.scaled_linear()

    def forward(self, z, t, cond=None, control=None, hooks=None, image_cond=None):
        if z.ndim != 4:
            raise ContractError(f"image latents are (B,C,h,w), got {tuple(z.shape)}")
        if image_cond is not None:
            raise ContractError("image denoiser has no image conditioning channel")
        t = torch.as_tensor(t)
        sig = torch.tensor(self.schedule.sigmas, dtype=z.dtype)[t].reshape(-1)
        ab = torch.tensor(self.schedule.alphas_bar, dtype=z.dtype)[t].reshape(-1)
        if sig.numel() == 1:
            sig, ab = sig.expand(z.shape[0]), ab.expand(z.shape[0])
        return self.predict(z / ab.sqrt()[:, None, None, None], sig, cond, control, hooks)


class VideoDenoiser(_DenoiserBase):
    """Noise predictor over a noise ladder; ``z`` is (F,C,h,w) or (B,F,C,h,w).

    The latent is in exploding form ``x + sigma * eps``, the same form the
    image model converts its variance-preserving input to, so both share
    one backbone parametrization.
    """

    def __init__(self, spec: DenoiserSpec = DenoiserSpec(temporal=True), ladder: NoiseSchedule = None):
        if not spec.temporal:
            raise ConfigError("video denoiser needs a spec with temporal attention")
        super().__init__(spec)
        self.ladder = ladder or NoiseSchedule.karras(25)

    @classmethod
    def from_image(cls, image: ImageDenoiser, ladder=None, max_frames=16):
        """Video model whose spatial layers start as a copy of ``image``."""
        d = image.spec.to_dict()
        d.update(temporal=True, max_frames=max_frames)
        video = cls(DenoiserSpec.from_dict(d), ladder).to(image.dtype)
        missing, unexpected = video.core.load_state_dict(image.core.state_dict(), strict=False)
        assert not unexpected
        if image.control_branch is not None:
            video.attach_control().load_state_dict(image.control_branch.state_dict())
        return video

    def forward_sigma(self, z, sigma, cond=None, control=None, hooks=None, image_cond=None):
        """``sigma``: scalar or per-video tensor (B,)."""
        single = z.ndim == 4
        v = z[None] if single else z
        if v.ndim != 5:
            raise ContractError(f"video latents are (F,C,h,w) or (B,F,C,h,w), got {tuple(z.shape)}")
        b, f = v.shape[:2]
        if f < 1 or f > self.spec.max_frames:
            raise ContractError(f"frame count {f} outside 1..{self.spec.max_frames}")
        sigma = torch.as_tensor(sigma, dtype=v.dtype).reshape(-1)
        sigma = sigma.expand(b) if sigma.numel() == 1 else sigma
        s_frames = sigma.repeat_interleave(f)
        x_in = v.reshape(b * f, *v.shape[2:])
        if image_cond is not None:
            ic = image_cond.to(v.dtype)
            ic = ic.reshape(-1, *ic.shape[-3:])
            if ic.shape[0] == 1 and b > 1:
                ic = ic.expand(b, -1, -1, -1)
            if ic.shape[0] != b:
                raise ContractError("image_cond must hold one latent per video")
            image_cond = ic.repeat_interleave(f, dim=0)
        ctx = cond
        if torch.is_tensor(cond) and cond.ndim == 3 and cond.shape[0] == b and b > 1:
            ctx = cond.repeat_interleave(f, dim=0)
        eps = self.predict(x_in, s_frames, ctx, control, hooks, image_cond, n_frames=f)
        eps = eps.reshape(v.shape)
        return eps[0] if single else eps

    def forward(self, z, i, cond=None, control=None, hooks=None, image_cond=None):
        sigma = float(self.ladder.sigmas[i])
        return self.forward_sigma(z, sigma, cond, control, hooks, image_cond)
