"""Trained toy models, cached on disk by the hash of their training recipe."""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import torch

from ..denoiser import (
    TrainConfig,
    VideoDenoiser,
    build_image_denoiser,
    decode,
    image_dataset,
    load_denoiser,
    save_denoiser,
    train_denoiser,
    video_dataset,
)
from ..errors import ConfigError
from ..metrics import LearnedDepthEstimator


@dataclass(frozen=True)
class ModelConfig:
    """Recipe for the three toy models the pipeline needs."""

    image_steps: int = 800
    image_data: int = 400
    video_steps: int = 600
    video_data: int = 64
    video_frames: int = 16
    depth_steps: int = 600
    depth_data: int = 400
    resolution: tuple = (32, 32)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "seed" and isinstance(v, int) and v < 1:
                raise ConfigError(f"{f.name} must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown model settings: {sorted(bad)}")
        return cls(**d)

    def _digest(self, *names):
        part = {n: getattr(self, n) for n in names}
        return hashlib.sha256(json.dumps(part, sort_keys=True).encode()).hexdigest()[:16]

    def image_hash(self):
        return self._digest("image_steps", "image_data", "resolution", "seed")

    def video_hash(self):
        return self._digest("image_steps", "image_data", "video_steps", "video_data", "video_frames", "resolution", "seed")

    def depth_hash(self):
        return self._digest("depth_steps", "depth_data", "resolution", "seed")

    def digest(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def default_cache_dir():
    return Path(os.environ.get("SCENEVID_CACHE", Path.home() / ".cache" / "scenevid"))


def _cached(directory: Path, build, save):
    """Return ``directory`` after building into it once (atomic rename)."""
    if (directory / "manifest.json").exists():
        return directory
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=directory.parent, prefix=directory.name + ".tmp"))
    try:
        save(build(), tmp)
        try:
            tmp.rename(directory)
        except OSError:  # another process finished first
            shutil.rmtree(tmp)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return directory


def train_image_model(cfg: ModelConfig, log=None):
    torch.manual_seed(cfg.seed)
    data = image_dataset(cfg.image_data, seed=cfg.seed + 1, resolution=cfg.resolution)
    model = build_image_denoiser(seed=cfg.seed)
    train_denoiser(model, data, TrainConfig(steps=cfg.image_steps, batch=16, seed=cfg.seed), log=log)
    return model


def train_video_model(cfg: ModelConfig, image_model, log=None):
    data = video_dataset(cfg.video_data, cfg.video_frames, seed=cfg.seed + 2, resolution=cfg.resolution)
    model = VideoDenoiser.from_image(image_model, max_frames=cfg.video_frames)
    train_denoiser(model, data, TrainConfig(steps=cfg.video_steps, batch=4, heldout=4, seed=cfg.seed), log=log)
    return model


def train_depth_estimator(cfg: ModelConfig, log=None):
    data = image_dataset(cfg.depth_data, seed=cfg.seed + 3, resolution=cfg.resolution)
    rgb = decode(data.latents).permute(0, 2, 3, 1).numpy()
    return LearnedDepthEstimator.train(rgb, data.depth.numpy(), steps=cfg.depth_steps, seed=cfg.seed, log=log)


def ensure_models(cfg: ModelConfig = ModelConfig(), cache_dir=None, log=None):
    """Paths ``{"image", "video", "depth"}`` of trained checkpoints, training any that are missing."""
    root = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    image_dir = _cached(root / f"image-{cfg.image_hash()}", lambda: train_image_model(cfg, log), save_denoiser)
    video_dir = _cached(
        root / f"video-{cfg.video_hash()}", lambda: train_video_model(cfg, load_denoiser(image_dir), log), save_denoiser
    )
    depth_dir = _cached(root / f"depth-{cfg.depth_hash()}", lambda: train_depth_estimator(cfg, log), lambda m, d: m.save(d))
    return {"image": image_dir, "video": video_dir, "depth": depth_dir}


def load_models(paths):
    """(image denoiser, video denoiser, depth estimator) from :func:`ensure_models` paths."""
    return load_denoiser(paths["image"]), load_denoiser(paths["video"]), LearnedDepthEstimator.load(paths["depth"])
