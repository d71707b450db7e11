"""Extended self-attention: every frame attends to keys/values of all keyframes."""
from __future__ import annotations

import math

import torch

from ..errors import ContractError


def extended_attention(q_i, k_all, v_all, d):
    """``softmax(q_i k_all^T / sqrt(d)) v_all`` for one frame and one head.

    q_i: (N, d) queries of frame i; k_all, v_all: (n*N, d) keys and values
    concatenated over all n keyframes.
    """
    if d <= 0:
        raise ContractError(f"key dimension must be positive, got {d}")
    if k_all.shape[0] != v_all.shape[0]:
        raise ContractError("keys and values must have the same length")
    if q_i.shape[-1] != k_all.shape[-1]:
        raise ContractError("query and key feature sizes differ")
    w = torch.softmax(q_i @ k_all.transpose(-1, -2) / math.sqrt(d), dim=-1)
    return w @ v_all


def attention_weights(q_i, k_all, d):
    if d <= 0:
        raise ContractError(f"key dimension must be positive, got {d}")
    return torch.softmax(q_i @ k_all.transpose(-1, -2) / math.sqrt(d), dim=-1)


def concat_frames(x, group=None):
    """(B, N, C) -> (B, B*N, C) with each row holding all frames of its group.

    ``group`` splits the batch into independent groups of that many frames
    (default: the whole batch is one group).
    """
    b, n, c = x.shape
    g = b if group is None else int(group)
    if b % g:
        raise ContractError(f"batch {b} not divisible into groups of {g}")
    cat = x.reshape(b // g, g * n, c)
    return cat.repeat_interleave(g, dim=0)


class ExtendedAttentionProcessor:
    """Drop-in attention kernel for :class:`TapHooks.processor`.

    Splits heads and applies :func:`extended_attention` per head with keys
    and values concatenated across the frames of each group.
    """

    def __init__(self, group=None):
        self.group = group
        self.calls = 0

    def __call__(self, q, k, v, heads):
        self.calls += 1
        b, n, inner = q.shape
        d = inner // heads
        kc, vc = concat_frames(k, self.group), concat_frames(v, self.group)
        qh = q.view(b, n, heads, d).transpose(1, 2)
        kh = kc.view(b, kc.shape[1], heads, d).transpose(1, 2)
        vh = vc.view(b, vc.shape[1], heads, d).transpose(1, 2)
        out = extended_attention(qh, kh, vh, d)
        return out.transpose(1, 2).reshape(b, n, inner)
