"""Geometry-guided keyframe generation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..denoiser.codec import decode, encode
from ..denoiser.text import PromptEmbedding
from ..diffusion.hooks import TapHooks
from ..diffusion.latent import Latent
from ..diffusion.samplers import ddim_invert, ddim_sample, ddim_timesteps
from ..errors import ConfigError, ContractError
from .attention import ExtendedAttentionProcessor
from .injection import FeatureInjector, InjectionConfig


@dataclass(frozen=True)
class KeyframeConfig:
    steps: int = 50
    injection: InjectionConfig = InjectionConfig()
    inject: bool = True
    control_strength: float = 1.0
    extended_attention: bool = True
    guided: bool = True  # False: random initial noise, no depth control, no injection
    prompt: str = "a sks box in sks field"
    seed: int = 0

    def __post_init__(self):
        if self.control_strength < 0:
            raise ConfigError("control strength must be nonnegative")

    def to_dict(self):
        d = asdict(self)
        return d

    def digest(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class KeyframeSet:
    frames: np.ndarray  # (K, H, W, 3) in [0, 1]
    frame_indices: tuple
    latents: torch.Tensor  # (K, C, h, w)
    packs: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        idx = tuple(int(i) for i in self.frame_indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ContractError(f"keyframe indices must be strictly increasing, got {idx}")
        if len(idx) != len(self.frames):
            raise ContractError("one index per keyframe required")
        self.frame_indices = idx

    def __len__(self):
        return len(self.frame_indices)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for i, (idx, img) in enumerate(zip(self.frame_indices, self.frames)):
            Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)).save(directory / f"key_{i:03d}_frame_{idx:04d}.png")
        Latent(self.latents, self.frame_indices).save(directory / "latent")
        manifest = {"frame_indices": list(self.frame_indices), **self.info}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        lat = Latent.load(directory / "latent")
        frames = decode(lat.data.float()).clamp(0, 1).permute(0, 2, 3, 1).numpy()
        info = {k: v for k, v in manifest.items() if k != "frame_indices"}
        return cls(frames, tuple(manifest["frame_indices"]), lat.data, [], info)


def keyframe_indices(n_frames, spacing=8):
    """0, spacing, 2*spacing, ... always ending on the last frame."""
    if spacing < 1:
        raise ConfigError("keyframe spacing must be positive")
    idx = list(range(0, n_frames, spacing))
    if idx[-1] != n_frames - 1:
        idx.append(n_frames - 1)
    return idx


def _pack_tensors(packs, dtype):
    rgb = torch.stack([torch.as_tensor(p.rgb, dtype=dtype).permute(2, 0, 1) for p in packs])
    depth = torch.stack([torch.as_tensor(p.depth, dtype=dtype) for p in packs])
    visible = np.stack([p.coverage_mask for p in packs])
    return rgb, depth, visible


def generate_keyframes(packs, denoiser, config: KeyframeConfig = KeyframeConfig(), frame_indices=None):
    """Jointly generate one keyframe per guidance pack.

    Guided: the coarse renders are DDIM-inverted (same prompt and depth
    control as sampling) and the recorded features are replayed through
    the visibility masks while sampling from the inverted latents.
    Unguided: seeded Gaussian initial noise and the prompt alone.
    """
    if not packs:
        raise ContractError("need at least one guidance pack")
    k = len(packs)
    frame_indices = tuple(range(k)) if frame_indices is None else tuple(frame_indices)
    dtype = denoiser.dtype
    rgb, depth, visible = _pack_tensors(packs, dtype)
    cond = PromptEmbedding.embed(config.prompt, denoiser.spec.context_tokens, denoiser.spec.context_dim)
    sched = denoiser.schedule
    processor = ExtendedAttentionProcessor() if config.extended_attention else None
    control = None
    if config.guided and denoiser.control_branch is not None and config.control_strength > 0:
        with torch.no_grad():
            control = denoiser.control_from_depth(depth, config.control_strength)
    injector = None
    with torch.no_grad():
        z0 = encode(rgb, denoiser.spec.encode_levels)
        if config.guided:
            base_hooks = TapHooks(processor=processor) if processor else None
            z_init, trace = ddim_invert(z0, denoiser, sched, config.steps, cond, hooks=base_hooks, control=control)
            if config.inject:
                injector = FeatureInjector(trace, config.injection, denoiser, visible, sched.T, processor=processor)
        else:
            gen = torch.Generator().manual_seed(config.seed)
            z_init = torch.randn(z0.shape, generator=gen, dtype=dtype)
        hooks = injector if injector is not None else (TapHooks(processor=processor) if processor else None)
        z = ddim_sample(z_init, denoiser, sched, config.steps, cond, hooks=hooks, control=control)
        frames = decode(z).clamp(0, 1).permute(0, 2, 3, 1).cpu().numpy()
    info = {
        "seed": config.seed,
        "config_hash": config.digest(),
        "guided": config.guided,
        "firings": dict(injector.firings) if injector else {},
    }
    return KeyframeSet(frames, frame_indices, z, list(packs), info)
