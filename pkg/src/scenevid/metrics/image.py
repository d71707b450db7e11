"""SSIM, embeddings and embedding-based scores."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d, zoom

from ..errors import ContractError


def _gaussian(window, sigma):
    x = np.arange(window) - (window - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x, g):
    """Separable correlation keeping only fully covered (valid) positions."""
    r = len(g) // 2
    out = correlate1d(x, g, axis=0, mode="constant")[r : x.shape[0] - r]
    return correlate1d(out, g, axis=1, mode="constant")[:, r : x.shape[1] - r]


def ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM over valid window positions and channels (HW or HWC arrays)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if window % 2 == 0 or window < 1:
        raise ContractError("window must be a positive odd size")
    if a.shape[0] < window or a.shape[1] < window:
        raise ContractError(f"images smaller than the {window}px window")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    g = _gaussian(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(num / den)
    return float(np.mean(scores))


def ssim_video(frames, reference):
    """Mean SSIM of each frame against one reference image."""
    return float(np.mean([ssim(f, reference) for f in frames]))


class DownsampleEmbedder:
    """Image -> 16x16 (per channel) downsample, flattened, zero-mean, unit norm.

    A zero vector is returned when the image is constant.
    """

    def __init__(self, size=16):
        self.size = size

    def __call__(self, image):
        x = np.asarray(image, dtype=np.float64)
        if x.ndim == 2:
            x = x[..., None]
        h, w = x.shape[:2]
        if h % self.size == 0 and w % self.size == 0:
            small = x.reshape(self.size, h // self.size, self.size, w // self.size, x.shape[2]).mean(axis=(1, 3))
        else:
            small = zoom(x, (self.size / h, self.size / w, 1), order=1)
        v = small.reshape(-1)
        v = v - v.mean()
        n = np.linalg.norm(v)
        return v / n if n > 1e-12 else np.zeros_like(v)


def _cos(u, v):
    return float(np.dot(u, v))


def consistency(frames, embedder=None):
    """Mean cosine similarity of consecutive frame embeddings."""
    if len(frames) < 2:
        raise ContractError("consistency needs at least two frames")
    emb = embedder or DownsampleEmbedder()
    e = [emb(f) for f in frames]
    return float(np.mean([_cos(e[i], e[i + 1]) for i in range(len(e) - 1)]))


def input_similarity(frames, image, embedder=None):
    """Mean cosine similarity between each frame and the input image."""
    if len(frames) < 1:
        raise ContractError("need at least one frame")
    emb = embedder or DownsampleEmbedder()
    ref = emb(image)
    return float(np.mean([_cos(emb(f), ref) for f in frames]))
