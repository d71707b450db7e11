"""Animated scenes: a rigidly moving foreground, a static background, a camera track."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from ..errors import ConfigError
from .camera import Camera, RigidTransform
from .mesh import Mesh
from .raster import GuidancePack, TaggedMesh, rasterize


@dataclass(frozen=True)
class SceneAnimation:
    foreground: Mesh
    fg_transforms: tuple
    background: Mesh | None
    camera_track: tuple
    n_frames: int

    def __post_init__(self):
        object.__setattr__(self, "fg_transforms", tuple(self.fg_transforms))
        object.__setattr__(self, "camera_track", tuple(self.camera_track))
        if self.n_frames < 1:
            raise ConfigError("n_frames must be positive")
        if len(self.fg_transforms) != self.n_frames or len(self.camera_track) != self.n_frames:
            raise ConfigError(
                f"per-frame lists must have length {self.n_frames}: "
                f"got {len(self.fg_transforms)} transforms, {len(self.camera_track)} cameras"
            )

    def tagged_meshes(self, frame):
        items = []
        if self.background is not None:
            items.append(TaggedMesh(self.background))
        items.append(TaggedMesh(self.foreground, self.fg_transforms[frame], foreground=True))
        return items


def interpolate_transforms(keys, n_frames):
    """Per-frame transforms from ``[(frame, translation, axis, angle, scale), ...]``.

    Translation and scale interpolate linearly, rotation by slerp; frames
    outside the keyed range hold the nearest key.
    """
    if not keys:
        return [RigidTransform()] * n_frames
    keys = sorted(keys, key=lambda k: k[0])
    frames = np.array([k[0] for k in keys], dtype=float)
    if len(set(frames)) != len(frames):
        raise ConfigError("duplicate transform key frame")
    trans = np.array([k[1] for k in keys], dtype=float)
    rots = Rotation.from_rotvec(
        [np.asarray(k[2], float) / np.linalg.norm(k[2]) * k[3] if np.linalg.norm(k[2]) > 0 else np.zeros(3) for k in keys]
    )
    scales = np.array([k[4] for k in keys], dtype=float)
    out = []
    slerp = Slerp(frames, rots) if len(keys) > 1 else None
    for f in range(n_frames):
        fc = float(np.clip(f, frames[0], frames[-1]))
        if slerp is None:
            rot = rots[0].as_matrix()
        else:
            rot = slerp([fc]).as_matrix()[0]
        t = np.array([np.interp(fc, frames, trans[:, i]) for i in range(3)])
        out.append(RigidTransform(rot, t, float(np.interp(fc, frames, scales))))
    return out


def render_animation(scene: SceneAnimation, resolution) -> list[GuidancePack]:
    return [rasterize(scene.tagged_meshes(f), scene.camera_track[f], resolution) for f in range(scene.n_frames)]


def static_scene(foreground, background, camera: Camera, n_frames, transform=None):
    transform = transform or RigidTransform()
    return SceneAnimation(foreground, [transform] * n_frames, background, [camera] * n_frames, n_frames)
