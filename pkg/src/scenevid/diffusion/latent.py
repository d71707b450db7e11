"""Latent arrays with global frame positions."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import ContractError


@dataclass(frozen=True)
class Latent:
    data: torch.Tensor  # (F, C, h, w)
    frame_indices: tuple = field(default=None)

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ContractError(f"latent must be F x C x h x w, got shape {tuple(self.data.shape)}")
        idx = tuple(range(self.data.shape[0])) if self.frame_indices is None else tuple(int(i) for i in self.frame_indices)
        if len(idx) != self.data.shape[0]:
            raise ContractError("one frame index per frame required")
        object.__setattr__(self, "frame_indices", idx)

    @property
    def n_frames(self):
        return self.data.shape[0]

    def is_finite(self):
        return bool(torch.isfinite(self.data).all())

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arr = self.data.detach().cpu().numpy()
        arr.astype(arr.dtype.newbyteorder("<")).tofile(directory / "latent.raw")
        manifest = {"dtype": str(arr.dtype), "byte_order": "little", "shape": list(arr.shape), "frame_indices": list(self.frame_indices)}
        (directory / "latent.json").write_text(json.dumps(manifest, indent=2))
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        m = json.loads((directory / "latent.json").read_text())
        arr = np.fromfile(directory / "latent.raw", dtype=np.dtype(m["dtype"]).newbyteorder("<")).reshape(m["shape"])
        return cls(torch.from_numpy(arr.astype(m["dtype"])), tuple(m["frame_indices"]))
