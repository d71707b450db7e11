"""Low-rank adapters on the attention and feedforward projections."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, ContractError

ATTN_PROJ = ("to_q", "to_k", "to_v", "to_out")
FF_PROJ = ("fc1", "fc2")


class LoRALinear(nn.Module):
    """``W0 x + s * B (A x)`` with ``W0`` frozen and ``B`` starting at zero."""

    def __init__(self, base: nn.Linear, rank, scale=None, generator=None):
        super().__init__()
        if rank < 1:
            raise ConfigError("LoRA rank must be positive")
        self.base = base
        self.rank = int(rank)
        self.scale = 1.0 / rank if scale is None else float(scale)
        d_in, d_out = base.in_features, base.out_features
        w = base.weight
        bound = 1.0 / math.sqrt(d_in)
        a = (torch.rand(rank, d_in, generator=generator, dtype=w.dtype) * 2 - 1) * bound
        self.A = nn.Parameter(a)
        self.B = nn.Parameter(torch.zeros(d_out, rank, dtype=w.dtype))

    def delta(self):
        return self.scale * self.B @ self.A

    def forward(self, x):
        return self.base(x) + self.scale * ((x @ self.A.t()) @ self.B.t())


def lora_targets(model):
    """Names of every attention/feedforward projection inside transformer blocks."""
    names = []
    for name, mod in model.named_modules():
        leaf = name.rsplit(".", 1)[-1]
        if not isinstance(mod, nn.Linear):
            continue
        parent = name.rsplit(".", 2)
        if leaf in ATTN_PROJ and len(parent) >= 2 and parent[-2] in ("attn1", "attn2"):
            names.append(name)
        elif leaf in FF_PROJ and len(parent) >= 2 and parent[-2] == "ff":
            names.append(name)
    return names


def _resolve(model, name):
    parent_name, _, leaf = name.rpartition(".")
    parent = model.get_submodule(parent_name) if parent_name else model
    return parent, leaf


class LoRAAdapter:
    """Handle on a set of :class:`LoRALinear` layers installed in a model."""

    def __init__(self, model, layers: dict, rank, scale, grad_flags=None):
        self.model = model
        self._grad_flags = grad_flags or {}
        self.layers = layers
        self.rank = rank
        self.scale = scale
        self.attached = True
        self.info = {}

    @property
    def targets(self):
        return list(self.layers)

    def parameters(self):
        for layer in self.layers.values():
            yield layer.A
            yield layer.B

    def detach(self):
        """Restore the original linear layers; the adapter keeps its weights."""
        if not self.attached:
            return self.model
        for name, layer in self.layers.items():
            parent, leaf = _resolve(self.model, name)
            setattr(parent, leaf, layer.base)
        for name, p in self.model.named_parameters():
            if name in self._grad_flags:
                p.requires_grad_(self._grad_flags[name])
        self.attached = False
        return self.model

    def reattach(self):
        if self.attached:
            return self.model
        for name, layer in self.layers.items():
            parent, leaf = _resolve(self.model, name)
            setattr(parent, leaf, layer)
        for p in self.model.parameters():
            p.requires_grad_(False)
        for p in self.parameters():
            p.requires_grad_(True)
        self.attached = True
        return self.model

    def state(self):
        out = {}
        for name, layer in self.layers.items():
            out[f"{name}.A"] = layer.A.detach().cpu().numpy()
            out[f"{name}.B"] = layer.B.detach().cpu().numpy()
        return out

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        np.savez(directory / "adapter.npz", **self.state())
        manifest = {"rank": self.rank, "scale": self.scale, "targets": self.targets, **self.info}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return directory

    @classmethod
    def load(cls, model, directory):
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        adapter = attach_lora(model, manifest["rank"], manifest["scale"], manifest["targets"])
        with np.load(directory / "adapter.npz") as arrays:
            with torch.no_grad():
                for name, layer in adapter.layers.items():
                    layer.A.copy_(torch.from_numpy(arrays[f"{name}.A"]))
                    layer.B.copy_(torch.from_numpy(arrays[f"{name}.B"]))
        adapter.info = {k: v for k, v in manifest.items() if k not in ("rank", "scale", "targets")}
        return adapter


def attach_lora(model, rank=4, scale=None, targets=None, seed=0):
    """Install adapters on ``targets`` (default: all of :func:`lora_targets`).

    Base weights are frozen for the lifetime of the adapter.
    """
    available = lora_targets(model)
    targets = available if targets is None else list(targets)
    unknown = [t for t in targets if t not in available]
    if unknown:
        raise ConfigError(f"unknown LoRA target layers: {unknown}")
    if not targets:
        raise ConfigError("no LoRA target layers selected")
    flags = {name: p.requires_grad for name, p in model.named_parameters()}
    for p in model.parameters():
        p.requires_grad_(False)
    gen = torch.Generator().manual_seed(seed)
    layers = {}
    for name in targets:
        parent, leaf = _resolve(model, name)
        base = getattr(parent, leaf)
        if isinstance(base, LoRALinear):
            raise ContractError(f"layer {name} already carries an adapter")
        layer = LoRALinear(base, rank, scale, gen)
        setattr(parent, leaf, layer)
        layers[name] = layer
    s = 1.0 / rank if scale is None else float(scale)
    return LoRAAdapter(model, layers, rank, s, flags)
