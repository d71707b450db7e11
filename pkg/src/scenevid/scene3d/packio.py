"""Guidance pack directories: PNG color, PFM depth, PNG masks and a manifest."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ContractError
from .raster import GuidancePack

MANIFEST = "manifest.json"


def write_pfm(path, data):
    data = np.asarray(data, dtype="<f4")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        # PFM stores rows bottom to top
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind != b"Pf":
            raise ContractError(f"{path}: only grayscale PFM supported")
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(w * h * 4), dtype=dtype).reshape(h, w)
    return data[::-1].astype(np.float64)


def to_png8(rgb):
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_packs(directory, packs, cameras=None, extra=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, p in enumerate(packs):
        Image.fromarray(to_png8(p.rgb)).save(directory / f"frame_{i:04d}.rgb.png")
        write_pfm(directory / f"frame_{i:04d}.depth.pfm", p.depth)
        Image.fromarray(p.coverage_mask.astype(np.uint8) * 255).save(directory / f"frame_{i:04d}.mask.png")
        Image.fromarray(p.fg_mask.astype(np.uint8) * 255).save(directory / f"frame_{i:04d}.fgmask.png")
    w, h = packs[0].resolution if packs else (0, 0)
    manifest = {
        "resolution": [w, h],
        "n_frames": len(packs),
        "depth_format": "pfm-float32-little-endian",
        "cameras": [
            dict(c.to_dict(), intrinsics=c.intrinsics(w, h)) for c in cameras
        ]
        if cameras is not None
        else None,
    }
    manifest.update(extra or {})
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def read_packs(directory):
    """Load packs as written by :func:`write_packs` (RGB quantized to 8 bits)."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    packs = []
    for i in range(manifest["n_frames"]):
        rgb = np.asarray(Image.open(directory / f"frame_{i:04d}.rgb.png"), dtype=np.float64) / 255.0
        depth = read_pfm(directory / f"frame_{i:04d}.depth.pfm")
        cov = np.asarray(Image.open(directory / f"frame_{i:04d}.mask.png")) > 127
        fg_path = directory / f"frame_{i:04d}.fgmask.png"
        fg = np.asarray(Image.open(fg_path)) > 127 if fg_path.exists() else np.zeros_like(cov)
        packs.append(GuidancePack(rgb, np.where(cov, depth, 0.0), cov, fg & cov))
    return packs, manifest


def quantize_pack(pack: GuidancePack) -> GuidancePack:
    """The pack as it reads back from disk: 8-bit RGB, float32 depth."""
    depth = np.where(pack.coverage_mask, pack.depth.astype(np.float32).astype(np.float64), 0.0)
    return GuidancePack(to_png8(pack.rgb) / 255.0, depth, pack.coverage_mask, pack.fg_mask)
