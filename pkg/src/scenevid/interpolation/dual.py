"""Dual-trajectory keyframe interpolation with the toy video model."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from ..denoiser.codec import decode, encode
from ..denoiser.text import PromptEmbedding
from ..diffusion.latent import Latent
from ..diffusion.samplers import edm_invert, edm_step, ladder_indices
from ..errors import ConfigError, ContractError, NumericError
from ..keyframes.injection import FeatureInjector, InjectionConfig


def time_reverse(z):
    """Reverse the frame axis of a :class:`Latent` (indices follow) or a tensor."""
    if isinstance(z, Latent):
        return Latent(z.data.flip(0), tuple(reversed(z.frame_indices)))
    return z.flip(-4)


@dataclass(frozen=True)
class FusionWeights:
    """Per-frame reverse weight; the forward trajectory gets ``1 - alpha``."""

    alphas: tuple

    def __post_init__(self):
        a = tuple(float(x) for x in self.alphas)
        object.__setattr__(self, "alphas", a)
        if len(a) == 0:
            raise ContractError("need at least one frame")
        if len(a) > 1 and (a[0] != 0.0 or a[-1] != 1.0):
            raise ContractError("fusion weights must start at 0 and end at 1")
        if any(x < 0 or x > 1 for x in a) or any(y < x for x, y in zip(a, a[1:])):
            raise ContractError("fusion weights must be nondecreasing within [0, 1]")

    @classmethod
    def linear(cls, n):
        if n < 1:
            raise ContractError("need at least one frame")
        if n == 1:
            return cls((0.0,))
        return cls(tuple(j / (n - 1) for j in range(n)))

    @classmethod
    def forward_only(cls, n):
        # bypasses the endpoint invariant on purpose: the single-direction baseline
        obj = object.__new__(cls)
        object.__setattr__(obj, "alphas", (0.0,) * n)
        return obj

    def tensor(self, dtype=torch.float32):
        return torch.tensor(self.alphas, dtype=dtype)


def fuse(fwd, rev, weights: FusionWeights):
    """``(1 - alpha_j) * fwd_j + alpha_j * rev_j`` frame by frame.

    ``rev`` must already be back in forward frame order.
    """
    f = fwd.data if isinstance(fwd, Latent) else fwd
    r = rev.data if isinstance(rev, Latent) else rev
    if f.shape != r.shape:
        raise ContractError(f"trajectory shapes differ: {tuple(f.shape)} vs {tuple(r.shape)}")
    if f.shape[-4] != len(weights.alphas):
        raise ContractError(f"{len(weights.alphas)} weights for {f.shape[-4]} frames")
    a = weights.tensor(f.dtype).view(-1, 1, 1, 1)
    out = (1 - a) * f + a * r
    return Latent(out, fwd.frame_indices) if isinstance(fwd, Latent) else out


@dataclass(frozen=True)
class InterpolationConfig:
    steps: int = 25
    injection: InjectionConfig = InjectionConfig(tau_conv=0.0, tau_sa=0.0, conv_taps=("up1.conv",))
    inject: bool = True
    control_strength: float = 1.0
    guided: bool = True  # False: Gaussian start, no depth control, no feature overrides
    dual: bool = True  # False: forward trajectory only
    prompt: str = "a sks box in sks field"
    seed: int = 0

    def __post_init__(self):
        if self.control_strength < 0:
            raise ConfigError("control strength must be nonnegative")

    def digest(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Segment:
    frames: np.ndarray  # (N, H, W, 3)
    latents: torch.Tensor  # (N, C, h, w)
    frame_indices: tuple
    info: dict = field(default_factory=dict)


def _latent_of(image, model):
    x = torch.as_tensor(np.asarray(image), dtype=model.dtype)
    if x.ndim == 3 and x.shape[-1] == 3:
        x = x.permute(2, 0, 1)
    return encode(x, model.spec.encode_levels)


class DualDenoiser:
    """Denoiser-contract view of the fused forward + time-reversed pair.

    Returns ``(1 - alpha) * eps_fwd + alpha * reverse(eps_rev)``; for an
    Euler step this equals fusing the two post-step latents. A recorder in
    ``hooks`` receives the tap features fused with the same weights, so one
    trace serves both trajectories (the reverse one reads it flipped).
    """

    def __init__(self, model, weights: FusionWeights, ic_a, ic_b, ctrl_f=None, ctrl_r=None):
        self.model = model
        self.spec = model.spec
        self.ladder = model.ladder
        self.tap_ids = model.tap_ids
        self.tap_shapes = model.tap_shapes
        self.alpha = weights.tensor(model.dtype)
        self.ic_a, self.ic_b = ic_a, ic_b
        self.ctrl_f, self.ctrl_r = ctrl_f, ctrl_r

    def _mix(self, f, r):
        a = self.alpha.view(-1, *([1] * (f.ndim - 1)))
        return (1 - a) * f + a * r.flip(0)

    def __call__(self, z, i, cond=None, hooks=None, **kwargs):
        if not bool(self.alpha.any()):  # forward only
            return self.model(z, i, cond, control=self.ctrl_f, hooks=hooks, image_cond=self.ic_a)
        rec = hooks.recorder if hooks is not None else None
        h = replace(hooks, recorder={}) if rec is not None else hooks
        h_r = replace(hooks, recorder={}) if rec is not None else hooks
        eps_f = self.model(z, i, cond, control=self.ctrl_f, hooks=h, image_cond=self.ic_a)
        eps_r = self.model(time_reverse(z), i, cond, control=self.ctrl_r, hooks=h_r, image_cond=self.ic_b)
        if rec is not None:
            for tap, vf in h.recorder.items():
                vr = h_r.recorder[tap]
                rec[tap] = tuple(map(self._mix, vf, vr)) if isinstance(vf, tuple) else self._mix(vf, vr)
        return self._mix(eps_f, eps_r)


def _ladder_frac(ladder):
    n = ladder.T - 1
    return lambda i: (n - i) / n if n else 1.0


def interpolate(kf_a, kf_b, packs, model, config: InterpolationConfig = InterpolationConfig(), frame_indices=None):
    """Frames between two keyframes, both endpoints included.

    ``kf_a`` / ``kf_b``: (H,W,3) images; ``packs``: guidance packs for every
    frame of the segment. Each denoising step runs a forward trajectory
    conditioned on ``kf_a`` and a time-reversed one conditioned on
    ``kf_b`` from the same latent, then fuses the two post-step latents.
    Inversion runs the same fused pair in the noise-increasing direction.
    """
    n = len(packs)
    if n < 2:
        raise ContractError("a segment needs at least its two endpoint frames")
    if n > model.spec.max_frames:
        raise ConfigError(
            f"segment of {n} frames exceeds the video model capacity of {model.spec.max_frames}; add keyframes to shorten segments"
        )
    frame_indices = tuple(range(n)) if frame_indices is None else tuple(frame_indices)
    dtype = model.dtype
    ladder = model.ladder
    cond = PromptEmbedding.embed(config.prompt, model.spec.context_tokens, model.spec.context_dim)
    lat_a, lat_b = _latent_of(kf_a, model), _latent_of(kf_b, model)
    rgb = torch.stack([torch.as_tensor(p.rgb, dtype=dtype).permute(2, 0, 1) for p in packs])
    depth = torch.stack([torch.as_tensor(p.depth, dtype=dtype) for p in packs])
    visible = np.stack([p.coverage_mask for p in packs])
    idx = ladder_indices(ladder, config.steps)
    weights = FusionWeights.linear(n) if config.dual else FusionWeights.forward_only(n)
    ctrl_f = ctrl_r = None
    inj_f = inj_r = None
    with torch.no_grad():
        if config.guided and model.control_branch is not None and config.control_strength > 0:
            ctrl_f = model.control_from_depth(depth, config.control_strength)
            ctrl_r = model.control_from_depth(depth.flip(0), config.control_strength)
        if config.guided:
            z0 = encode(rgb, model.spec.encode_levels)
            inverter = DualDenoiser(model, weights, lat_a, lat_b, ctrl_f, ctrl_r)
            z, trace = edm_invert(z0, inverter, ladder, config.steps, cond)
            if config.inject:
                frac = _ladder_frac(ladder)
                inj_f = FeatureInjector(trace, config.injection, model, visible, ladder.T, frac_fn=frac)
                flipped = trace.map_values(lambda v: v.flip(0))
                inj_r = FeatureInjector(flipped, config.injection, model, visible[::-1].copy(), ladder.T, frac_fn=frac)
        else:
            gen = torch.Generator().manual_seed(config.seed)
            z = torch.randn((n, *lat_a.shape), generator=gen, dtype=dtype) * float(ladder.sigmas[idx[0]])
        for k in range(len(idx) - 1):
            i, i_next = idx[k], idx[k + 1]
            h_f = inj_f(k, i) if inj_f else None
            eps_f = model(z, i, cond, control=ctrl_f, hooks=h_f, image_cond=lat_a)
            z_f = edm_step(ladder, z, eps_f, i, i_next)
            if config.dual:
                zr = time_reverse(z)
                h_r = inj_r(k, i) if inj_r else None
                eps_r = model(zr, i, cond, control=ctrl_r, hooks=h_r, image_cond=lat_b)
                z_r = time_reverse(edm_step(ladder, zr, eps_r, i, i_next))
                z = fuse(z_f, z_r, weights)
            else:
                z = z_f
            if not torch.isfinite(z).all():
                raise NumericError(f"interpolation diverged at ladder index {i}", step=i)
        frames = decode(z).clamp(0, 1).permute(0, 2, 3, 1).cpu().numpy()
    info = {
        "seed": config.seed,
        "config_hash": config.digest(),
        "firings": {**dict(inj_f.firings)} if inj_f else {},
    }
    return Segment(frames, z, frame_indices, info)


def segment_bounds(key_indices):
    return [(a, b) for a, b in zip(key_indices, key_indices[1:])]


def chain(keyframes, packs, model, config: InterpolationConfig = InterpolationConfig(), seeds=None):
    """Interpolate every adjacent keyframe pair and join the segments.

    ``packs`` covers every frame index from the first keyframe to the last.
    Shared endpoints are kept once: each segment contributes its frames up
    to (not including) its last, the final segment contributes all of them.
    Returns ``(frames, segments)``.
    """
    idx = keyframes.frame_indices
    if len(idx) < 2:
        raise ContractError("chaining needs at least two keyframes")
    base = idx[0]
    if len(packs) != idx[-1] - base + 1:
        raise ContractError(f"need {idx[-1] - base + 1} guidance packs, got {len(packs)}")
    segments = []
    out = []
    for s, (a, b) in enumerate(segment_bounds(idx)):
        cfg = config if seeds is None else _with_seed(config, seeds[s])
        seg = interpolate(
            keyframes.frames[s], keyframes.frames[s + 1], packs[a - base : b - base + 1], model, cfg, tuple(range(a, b + 1))
        )
        segments.append(seg)
        last = s == len(idx) - 2
        out.extend(seg.frames if last else seg.frames[:-1])
    return np.stack(out), segments


def _with_seed(config, seed):
    return replace(config, seed=int(seed))


def chain_length(segment_lengths):
    return sum(segment_lengths) - (len(segment_lengths) - 1)
