"""D-RMSE and depth estimators for generated frames."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..errors import ContractError


def _minmax(d, mask):
    vals = d[mask]
    lo, hi = vals.min(), vals.max()
    if hi - lo <= 1e-12:
        return np.zeros_like(d)
    return (d - lo) / (hi - lo)


def d_rmse(estimated, reference, coverage, normalize=True):
    """RMSE between estimated and reference depth over coverage pixels.

    With ``normalize`` each sequence is affinely mapped to [0,1] using its
    min and max over the coverage pixels first (a constant sequence maps
    to 0).
    """
    est = np.asarray(estimated, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    cov = np.asarray(coverage, dtype=bool)
    if est.shape != ref.shape or ref.shape != cov.shape:
        raise ContractError(f"depth shapes differ: {est.shape}, {ref.shape}, {cov.shape}")
    if not cov.any():
        raise ContractError("no coverage pixels to compare")
    if normalize:
        est, ref = _minmax(est, cov), _minmax(ref, cov)
    diff = (est - ref)[cov]
    return float(np.sqrt(np.mean(diff**2)))


def frame_key(image):
    a = np.ascontiguousarray(np.asarray(image, dtype=np.float64))
    return hashlib.sha256(a.tobytes()).hexdigest()


class RenderedDepthLookup:
    """Ground-truth depth for frames that are exactly known renders."""

    def __init__(self, packs=()):
        self.table = {frame_key(p.rgb): p.depth for p in packs}

    def __contains__(self, image):
        return frame_key(image) in self.table

    def __call__(self, image):
        try:
            return self.table[frame_key(image)]
        except KeyError:
            raise ContractError("frame is not a known render") from None


class DepthNet(nn.Module):
    def __init__(self, hidden=24):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, hidden, 3, padding=1), nn.SiLU(),
            nn.Conv2d(hidden, hidden, 3, padding=2, dilation=2), nn.SiLU(),
            nn.Conv2d(hidden, hidden, 3, padding=4, dilation=4), nn.SiLU(),
            nn.Conv2d(hidden, hidden, 3, padding=8, dilation=8), nn.SiLU(),
            nn.Conv2d(hidden, hidden, 3, padding=1), nn.SiLU(),
            nn.Conv2d(hidden, 1, 3, padding=1),
        )

    def forward(self, x):
        return nn.functional.softplus(self.net(x))[:, 0]


class LearnedDepthEstimator:
    """Small CNN regressing camera depth from RGB, trained on rasterized scenes.

    Stands in for a pretrained monocular estimator on generated frames;
    exact renders are answered from ``lookup`` when one is given.
    """

    def __init__(self, net: DepthNet | None = None, lookup: RenderedDepthLookup | None = None):
        self.net = net or DepthNet()
        self.lookup = lookup

    def __call__(self, image):
        if self.lookup is not None and image in self.lookup:
            return self.lookup(image)
        x = torch.as_tensor(np.asarray(image), dtype=torch.float32).permute(2, 0, 1)[None]
        with torch.no_grad():
            return self.net(x)[0].double().numpy()

    def estimate(self, frames):
        return np.stack([self(f) for f in frames])

    @classmethod
    def train(cls, rgb, depth, steps=400, batch=16, lr=3e-3, seed=0, log=None):
        """Fit on (N,H,W,3) images and (N,H,W) depth; loss over covered pixels only."""
        torch.manual_seed(seed)
        net = DepthNet()
        x = torch.as_tensor(np.asarray(rgb), dtype=torch.float32).permute(0, 3, 1, 2)
        d = torch.as_tensor(np.asarray(depth), dtype=torch.float32)
        cov = d > 0
        gen = torch.Generator().manual_seed(seed)
        opt = torch.optim.Adam(net.parameters(), lr=lr)
        for step in range(steps):
            pick = torch.randint(0, x.shape[0], (batch,), generator=gen)
            pred = net(x[pick])
            m = cov[pick]
            loss = ((pred - d[pick]) ** 2)[m].mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            if log and step % 100 == 0:
                log(f"depth step {step} loss {float(loss.detach()):.4f}")
        net.eval()
        return cls(net)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        np.savez(directory / "depthnet.npz", **{k: v.numpy() for k, v in self.net.state_dict().items()})
        (directory / "manifest.json").write_text(json.dumps({"kind": "depthnet"}))
        return directory

    @classmethod
    def load(cls, directory):
        net = DepthNet()
        with np.load(Path(directory) / "depthnet.npz") as arrays:
            net.load_state_dict({k: torch.from_numpy(arrays[k]) for k in arrays.files})
        net.eval()
        return cls(net)


def sequence_d_rmse(frames, packs, estimator, normalize=True):
    """D-RMSE of generated ``frames`` against the packs' rendered depth."""
    if len(frames) != len(packs):
        raise ContractError(f"{len(frames)} frames for {len(packs)} guidance packs")
    est = estimator.estimate(frames) if hasattr(estimator, "estimate") else np.stack([estimator(f) for f in frames])
    ref = np.stack([p.depth for p in packs])
    cov = np.stack([p.coverage_mask for p in packs])
    return d_rmse(est, ref, cov, normalize)
