"""Deterministic hash-based prompt embedder."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch

PAD = "<pad>"


def template(obj, environment=None):
    """The two prompt shapes used throughout: object alone, or object in an environment."""
    if environment is None:
        return f"a {obj}"
    return f"a {obj} in {environment}"


def _token_vector(token, dim):
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
    return np.random.default_rng(seed).standard_normal(dim) / np.sqrt(dim)


@dataclass(frozen=True)
class PromptEmbedding:
    text: str
    values: np.ndarray  # (tokens, dim)

    @classmethod
    def embed(cls, text, n_tokens=8, dim=32):
        words = text.lower().split()[:n_tokens]
        words += [PAD] * (n_tokens - len(words))
        vecs = [_token_vector(w, dim) + _position(i, dim) for i, w in enumerate(words)]
        return cls(text, np.stack(vecs).astype(np.float32))

    @property
    def shape(self):
        return self.values.shape

    def tensor(self, dtype=torch.float32):
        return torch.as_tensor(self.values, dtype=dtype)


def _position(i, dim):
    k = np.arange(dim // 2)
    ang = i / (10.0 ** (2 * k / dim))
    return 0.1 * np.concatenate([np.sin(ang), np.cos(ang)])


def embed_batch(prompts, n_tokens=8, dim=32, dtype=torch.float32):
    """Stack embeddings for a list of strings or PromptEmbedding -> (B, tokens, dim)."""
    out = []
    for p in prompts:
        e = p if isinstance(p, PromptEmbedding) else PromptEmbedding.embed(p, n_tokens, dim)
        out.append(e.tensor(dtype))
    return torch.stack(out)
