"""Pinhole cameras, rigid transforms and procedural camera trajectories.

Camera space follows the computer-vision convention: +x right, +y down,
+z along the viewing direction, so visible points have positive depth.
World space is y-up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, ContractError

_ORTHO_TOL = 1e-6


def axis_angle(axis, angle) -> np.ndarray:
    """Rotation matrix for ``angle`` radians about ``axis`` (Rodrigues)."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ContractError("rotation axis must be non-zero")
    x, y, z = axis / n
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def _check_rotation(r, what):
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ContractError(f"{what} must be 3x3")
    if not np.allclose(r.T @ r, np.eye(3), atol=_ORTHO_TOL) or abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
        raise ContractError(f"{what} is not a proper rotation")
    return r


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    uniform_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation, "rotation"))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if not self.uniform_scale > 0:
            raise ContractError("uniform_scale must be positive")

    def apply(self, points):
        return self.uniform_scale * np.asarray(points) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Camera:
    """``rotation``/``translation`` map world to camera: p_c = R p_w + t."""

    rotation: np.ndarray
    translation: np.ndarray
    vertical_fov: float
    aspect: float = 1.0
    near: float = 0.05
    far: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", _check_rotation(self.rotation, "camera rotation"))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if not (0.0 < self.vertical_fov < math.pi):
            raise ConfigError(f"vertical_fov must lie in (0, pi), got {self.vertical_fov}")
        if not self.aspect > 0:
            raise ConfigError("aspect must be positive")
        if not (0.0 < self.near < self.far):
            raise ConfigError(f"need 0 < near < far, got near={self.near} far={self.far}")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), vertical_fov=math.radians(50), aspect=1.0, near=0.05, far=100.0):
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-12:
            raise ConfigError("up vector is parallel to the viewing direction")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        return cls(rot, -rot @ eye, vertical_fov, aspect, near, far)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[2].copy()

    def intrinsics(self, width, height):
        fy = (height / 2.0) / math.tan(self.vertical_fov / 2.0)
        return {"fx": fy, "fy": fy, "cx": width / 2.0, "cy": height / 2.0}

    def world_to_camera(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def with_center(self, center) -> "Camera":
        return replace(self, translation=-self.rotation @ np.asarray(center, dtype=np.float64))

    def moved(self, delta) -> "Camera":
        """Translate the camera center by ``delta`` (world units), keeping orientation."""
        return replace(self, translation=self.translation - self.rotation @ np.asarray(delta, dtype=np.float64))

    def to_dict(self):
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "vertical_fov": self.vertical_fov,
            "aspect": self.aspect,
            "near": self.near,
            "far": self.far,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["rotation"]), np.array(d["translation"]), d["vertical_fov"], d["aspect"], d["near"], d["far"])


TRAJECTORY_KINDS = ("orbit", "pan", "zoom", "dolly", "static")


def make_camera_trajectory(kind, base: Camera, n_frames, **params):
    """Per-frame cameras starting exactly at ``base``.

    orbit:  total_angle (rad), pivot (default world origin), axis (default +y).
            Frame f is rotated by total_angle * f / n_frames so a full turn
            closes without repeating frame 0.
    pan:    offset=(dx, dy) in camera right/up units, reached at the last frame.
    zoom:   fov_end (rad) reached at the last frame.
    dolly:  distance along the viewing direction reached at the last frame
            (negative moves backward).
    static: no motion.
    """
    if kind not in TRAJECTORY_KINDS:
        raise ConfigError(f"unknown trajectory kind {kind!r}; expected one of {TRAJECTORY_KINDS}")
    if int(n_frames) < 1:
        raise ConfigError("n_frames must be >= 1")
    n_frames = int(n_frames)
    last = max(n_frames - 1, 1)
    cams = [base]
    for f in range(1, n_frames):
        s = f / last
        if kind == "static":
            cam = base
        elif kind == "orbit":
            angle = float(params.get("total_angle", 0.0)) * f / n_frames
            if angle == 0.0:
                cams.append(base)
                continue
            pivot = np.asarray(params.get("pivot", (0.0, 0.0, 0.0)), dtype=np.float64)
            rot = axis_angle(params.get("axis", (0.0, 1.0, 0.0)), angle)
            center = pivot + rot @ (base.center - pivot)
            # camera-to-world rotation is R^T; rotating it by `rot` gives R' = R rot^T
            new_rot = base.rotation @ rot.T
            cam = replace(base, rotation=new_rot, translation=-new_rot @ center)
        elif kind == "pan":
            dx, dy = params.get("offset", (0.0, 0.0))
            right, up = base.rotation[0], -base.rotation[1]
            cam = base.moved(s * (dx * right + dy * up))
        elif kind == "zoom":
            fov_end = float(params.get("fov_end", base.vertical_fov))
            cam = replace(base, vertical_fov=base.vertical_fov + s * (fov_end - base.vertical_fov))
        else:  # dolly
            cam = base.moved(s * float(params.get("distance", 0.0)) * base.forward)
        cams.append(cam)
    return cams
