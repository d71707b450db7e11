"""Procedural rasterized scenes used to train the toy denoisers from scratch."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from ..scene3d import Camera, SceneAnimation, box, checker_plane, interpolate_transforms, make_camera_trajectory, quad, render_animation
from ..scene3d.mesh import merge
from .codec import encode
from .text import template

FG_COLORS = {
    "red": (0.9, 0.1, 0.1),
    "blue": (0.1, 0.2, 0.9),
    "green": (0.15, 0.75, 0.2),
    "yellow": (0.95, 0.85, 0.1),
    "white": (0.95, 0.95, 0.95),
    "orange": (0.95, 0.5, 0.1),
    "purple": (0.55, 0.15, 0.7),
    "cyan": (0.1, 0.8, 0.85),
}
BG_COLORS = {
    "grey": ((0.85, 0.85, 0.8), (0.25, 0.3, 0.25)),
    "sand": ((0.9, 0.8, 0.55), (0.55, 0.4, 0.25)),
    "grass": ((0.5, 0.8, 0.4), (0.15, 0.35, 0.15)),
    "slate": ((0.6, 0.65, 0.75), (0.15, 0.15, 0.25)),
}
TRAJECTORIES = ("static", "orbit", "pan", "dolly", "zoom")


@dataclass
class DenoisingData:
    """Clean latents with prompts and rendered depth.

    Image data: latents (N,C,h,w), depth (N,H,W).
    Video data: latents (N,F,C,h,w), depth (N,F,H,W).
    """

    latents: torch.Tensor
    prompts: list
    depth: torch.Tensor | None = None

    def __len__(self):
        return self.latents.shape[0]

    @property
    def is_video(self):
        return self.latents.ndim == 5


def _foreground(rng):
    names = list(FG_COLORS)
    front, back = rng.choice(len(names), size=2, replace=False)
    fn, bn = names[front], names[back]
    if rng.random() < 0.8:
        size = rng.uniform(0.6, 1.1)
        mesh = box(size, FG_COLORS[fn], FG_COLORS[bn]).transformed(np.eye(3), (0.0, size / 2, 0.0))
        noun = "box"
    else:
        size = rng.uniform(0.7, 1.2)
        front_q = quad(size, size, FG_COLORS[fn], (0.0, size / 2 + 0.05, 0.01))
        back_q = quad(size, size, FG_COLORS[bn], (0.0, size / 2 + 0.05, -0.01))
        mesh = merge([front_q, back_q])
        noun = "panel"
    return mesh, f"{fn} {bn} {noun}"


def random_scene(rng: np.random.Generator, n_frames=1, resolution=(32, 32)):
    """A random foreground on a checker floor with a random camera path.

    Returns ``(SceneAnimation, prompt)``.
    """
    fg, obj = _foreground(rng)
    env = None
    bg = None
    if rng.random() < 0.9:
        env = list(BG_COLORS)[rng.integers(len(BG_COLORS))]
        a, b = BG_COLORS[env]
        if rng.random() < 0.5:
            a, b = b, a
        bg = checker_plane(10.0, int(rng.choice([6, 8, 10, 12])), a, b)
    az = rng.uniform(-math.pi / 3, math.pi / 3)
    dist = rng.uniform(2.8, 4.4)
    eye = (dist * math.sin(az), rng.uniform(0.8, 2.2), dist * math.cos(az))
    target = (rng.uniform(-0.3, 0.3), rng.uniform(0.3, 0.5), 0.0)
    w, h = resolution
    base = Camera.look_at(eye, target, vertical_fov=math.radians(rng.uniform(40, 55)), aspect=w / h)
    kind = TRAJECTORIES[rng.integers(len(TRAJECTORIES))] if n_frames > 1 else "static"
    params = {
        "orbit": {"total_angle": math.radians(rng.uniform(-40, 40))},
        "pan": {"offset": (rng.uniform(-0.8, 0.8), rng.uniform(-0.3, 0.3))},
        "dolly": {"distance": rng.uniform(-0.8, 0.8)},
        "zoom": {"fov_end": math.radians(rng.uniform(35, 60))},
        "static": {},
    }[kind]
    cams = make_camera_trajectory(kind, base, n_frames, **params)
    start = (rng.uniform(-0.6, 0.6), 0.0, rng.uniform(-0.5, 0.5))
    yaw0 = rng.uniform(-math.pi / 2, math.pi / 2)
    keys = [(0, start, (0.0, 1.0, 0.0), yaw0, 1.0)]
    if n_frames > 1 and rng.random() < 0.7:
        end = (start[0] + rng.uniform(-0.8, 0.8), 0.0, start[2] + rng.uniform(-0.5, 0.5))
        keys.append((n_frames - 1, end, (0.0, 1.0, 0.0), yaw0 + rng.uniform(-math.pi, math.pi), 1.0))
    transforms = interpolate_transforms(keys, n_frames)
    prompt = template(obj, f"{env} field" if env else None)
    return SceneAnimation(fg, transforms, bg, cams, n_frames), prompt


def image_dataset(n, seed=0, resolution=(32, 32), levels=1):
    rng = np.random.default_rng(seed)
    lat, prompts, depth = [], [], []
    for _ in range(n):
        scene, prompt = random_scene(rng, 1, resolution)
        pack = render_animation(scene, resolution)[0]
        lat.append(encode(torch.as_tensor(pack.rgb, dtype=torch.float32).permute(2, 0, 1), levels))
        depth.append(torch.as_tensor(pack.depth, dtype=torch.float32))
        prompts.append(prompt)
    return DenoisingData(torch.stack(lat), prompts, torch.stack(depth))


def video_dataset(n, n_frames, seed=0, resolution=(32, 32), levels=1):
    rng = np.random.default_rng(seed)
    lat, prompts, depth = [], [], []
    for _ in range(n):
        scene, prompt = random_scene(rng, n_frames, resolution)
        packs = render_animation(scene, resolution)
        rgb = torch.stack([torch.as_tensor(p.rgb, dtype=torch.float32).permute(2, 0, 1) for p in packs])
        lat.append(encode(rgb, levels))
        depth.append(torch.stack([torch.as_tensor(p.depth, dtype=torch.float32) for p in packs]))
        prompts.append(prompt)
    return DenoisingData(torch.stack(lat), prompts, torch.stack(depth))
