"""Building blocks for the toy UNets."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def timestep_embedding(c_noise, dim, max_period=100.0):
    """Sinusoidal features of the scalar noise conditioning ``c_noise`` (B,)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=c_noise.dtype, device=c_noise.device) / half)
    args = 10.0 * c_noise[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


def groups_for(ch):
    for g in (8, 4, 2, 1):
        if ch % g == 0:
            return g
    return 1


class ResBlock(nn.Module):
    def __init__(self, in_ch, out_ch, time_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups_for(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(groups_for(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


def scaled_dot_attention(q, k, v, heads):
    """Standard multi-head attention on (B, N, inner) tensors."""
    b, n, inner = q.shape
    d = inner // heads
    qh = q.view(b, n, heads, d).transpose(1, 2)
    kh = k.view(b, k.shape[1], heads, d).transpose(1, 2)
    vh = v.view(b, v.shape[1], heads, d).transpose(1, 2)
    w = torch.softmax(qh @ kh.transpose(-1, -2) / math.sqrt(d), dim=-1)
    return (w @ vh).transpose(1, 2).reshape(b, n, inner)


class Attention(nn.Module):
    """Self- (context=None) or cross-attention with optional q/k tap."""

    def __init__(self, dim, heads=1, context_dim=None, tap_id=None):
        super().__init__()
        self.heads = heads
        self.tap_id = tap_id
        self.to_q = nn.Linear(dim, dim, bias=False)
        self.to_k = nn.Linear(context_dim or dim, dim, bias=False)
        self.to_v = nn.Linear(context_dim or dim, dim, bias=False)
        self.to_out = nn.Linear(dim, dim)

    def forward(self, x, context=None, hooks=None):
        src = x if context is None else context
        q, k, v = self.to_q(x), self.to_k(src), self.to_v(src)
        if self.tap_id is not None and hooks is not None:
            if hooks.attn is not None:
                q, k = hooks.attn(self.tap_id, q, k)
            if hooks.recorder is not None:
                hooks.recorder[self.tap_id] = (q, k)
            if hooks.processor is not None:
                return self.to_out(hooks.processor(q, k, v, self.heads))
        return self.to_out(scaled_dot_attention(q, k, v, self.heads))


class FeedForward(nn.Module):
    def __init__(self, dim, mult=2):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim * mult)
        self.fc2 = nn.Linear(dim * mult, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Self-attention, cross-attention to the prompt, feedforward."""

    def __init__(self, ch, context_dim, heads, tap_id):
        super().__init__()
        self.norm_in = nn.GroupNorm(groups_for(ch), ch)
        self.norm1 = nn.LayerNorm(ch)
        self.attn1 = Attention(ch, heads, tap_id=tap_id)
        self.norm2 = nn.LayerNorm(ch)
        self.attn2 = Attention(ch, heads, context_dim=context_dim)
        self.norm3 = nn.LayerNorm(ch)
        self.ff = FeedForward(ch)

    def forward(self, x, context, hooks=None):
        b, c, h, w = x.shape
        t = self.norm_in(x).flatten(2).transpose(1, 2)
        t = t + self.attn1(self.norm1(t), hooks=hooks)
        t = t + self.attn2(self.norm2(t), context=context)
        t = t + self.ff(self.norm3(t))
        return x + t.transpose(1, 2).reshape(b, c, h, w)


class TemporalAttention(nn.Module):
    """Attention over the frame axis at every spatial position.

    The output projection starts at zero so a freshly added layer leaves
    the per-frame network untouched.
    """

    def __init__(self, ch, max_frames, heads=1):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(groups_for(ch), ch)
        self.pos = nn.Parameter(torch.zeros(max_frames, ch))
        self.to_q = nn.Linear(ch, ch, bias=False)
        self.to_k = nn.Linear(ch, ch, bias=False)
        self.to_v = nn.Linear(ch, ch, bias=False)
        self.to_out = nn.Linear(ch, ch)
        nn.init.normal_(self.pos, std=0.02)
        nn.init.zeros_(self.to_out.weight)
        nn.init.zeros_(self.to_out.bias)

    def forward(self, x, n_frames):
        bf, c, h, w = x.shape
        b = bf // n_frames
        t = self.norm(x).view(b, n_frames, c, h * w).permute(0, 3, 1, 2).reshape(b * h * w, n_frames, c)
        t = t + self.pos[:n_frames]
        out = scaled_dot_attention(self.to_q(t), self.to_k(t), self.to_v(t), self.heads)
        out = self.to_out(out).view(b, h * w, n_frames, c).permute(0, 2, 3, 1).reshape(bf, c, h, w)
        return x + out
