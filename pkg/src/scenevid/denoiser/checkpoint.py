"""Weight checkpoints: ``weights.npz`` plus a JSON manifest."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from ..diffusion.schedule import NoiseSchedule
from ..errors import ContractError
from .unet import ControlBranch, DenoiserSpec, ImageDenoiser, VideoDenoiser


def save_denoiser(model, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    np.savez(directory / "weights.npz", **state)
    sched = model.ladder if isinstance(model, VideoDenoiser) else model.schedule
    manifest = {
        "kind": "video" if isinstance(model, VideoDenoiser) else "image",
        "spec": model.spec.to_dict(),
        "spec_hash": model.spec.digest(),
        "schedule": {"kind": sched.kind, "values": [float(v) for v in sched.values]},
        "control": model.control_branch is not None,
        "dtype": str(model.dtype).replace("torch.", ""),
        "train": model.train_info,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_denoiser(directory):
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise ContractError(f"no checkpoint manifest in {directory}") from None
    spec = DenoiserSpec.from_dict(manifest["spec"])
    if spec.digest() != manifest["spec_hash"]:
        raise ContractError("checkpoint spec hash mismatch")
    sched = NoiseSchedule(manifest["schedule"]["kind"], manifest["schedule"]["values"])
    model = VideoDenoiser(spec, sched) if manifest["kind"] == "video" else ImageDenoiser(spec, sched)
    if manifest["control"]:
        model.control_branch = ControlBranch(spec)
    model = model.to(getattr(torch, manifest["dtype"]))
    with np.load(directory / "weights.npz") as arrays:
        state = {k: torch.from_numpy(arrays[k]) for k in arrays.files}
    model.load_state_dict(state)
    model.train_info = manifest.get("train", {})
    model.eval()
    return model
