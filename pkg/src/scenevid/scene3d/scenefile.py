"""Line-oriented scene description format.

Grammar (one statement per line, ``#`` starts a comment)::

    resolution <W> <H>
    frames <N>
    mesh <fg|bg> quad [width=1] [height=1] [color=r,g,b] [offset=x,y,z]
    mesh <fg|bg> box [size=1] [front=r,g,b] [back=r,g,b] [offset=x,y,z]
    mesh <fg|bg> checker-plane [size=8] [tiles=8] [color_a=r,g,b] [color_b=r,g,b] [height=0]
    mesh <fg|bg> inline
      v <x> <y> <z> <r> <g> <b>
      f <i> <j> <k>
    end
    key <frame|end> [translate=x,y,z] [axis=x,y,z] [angle=deg] [scale=s]
    camera eye=x,y,z target=x,y,z [up=x,y,z] [fov=deg] [near=n] [far=f]
    trajectory <orbit|pan|zoom|dolly|static> [angle=deg] [pivot=x,y,z] [offset=dx,dy] [fov_end=deg] [distance=d]

Several ``mesh fg`` (or ``bg``) statements are merged into one mesh. ``key``
rows animate the foreground; frames between keys are interpolated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ContractError, ScenevidError, SceneParseError
from . import mesh as _mesh
from .animation import SceneAnimation, interpolate_transforms
from .camera import TRAJECTORY_KINDS, Camera, make_camera_trajectory

_FLOAT_KEYS = {"width", "height", "size", "angle", "scale", "fov", "near", "far", "fov_end", "distance"}
_VEC_KEYS = {"color", "offset", "front", "back", "color_a", "color_b", "translate", "axis", "eye", "target", "up", "pivot"}


@dataclass
class SceneDescription:
    resolution: tuple = (32, 32)
    n_frames: int = 1
    fg_parts: list = field(default_factory=list)
    bg_parts: list = field(default_factory=list)
    keys: list = field(default_factory=list)  # (frame or "end", translation, axis, angle_rad, scale)
    camera: dict = field(default_factory=dict)
    trajectory: tuple = ("static", {})

    def build(self, n_frames=None, resolution=None) -> SceneAnimation:
        n = int(n_frames or self.n_frames)
        w, h = resolution or self.resolution
        if not self.fg_parts:
            raise SceneParseError("scene has no foreground mesh")
        cam = self.camera
        base = Camera.look_at(
            cam.get("eye", (0.0, 0.0, 4.0)),
            cam.get("target", (0.0, 0.0, 0.0)),
            cam.get("up", (0.0, 1.0, 0.0)),
            vertical_fov=math.radians(cam.get("fov", 45.0)),
            aspect=w / h,
            near=cam.get("near", 0.05),
            far=cam.get("far", 100.0),
        )
        kind, params = self.trajectory
        cams = make_camera_trajectory(kind, base, n, **params)
        keys = [((n - 1) if f == "end" else min(int(f), n - 1),) + tuple(rest) for f, *rest in self.keys]
        deduped = {k[0]: k for k in keys}
        transforms = interpolate_transforms(list(deduped.values()), n)
        bg = _mesh.merge(self.bg_parts) if self.bg_parts else None
        return SceneAnimation(_mesh.merge(self.fg_parts), transforms, bg, cams, n)


def _parse_value(key, raw, lineno, path):
    try:
        if key in _VEC_KEYS:
            return tuple(float(x) for x in raw.split(","))
        if key == "tiles":
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise SceneParseError(f"bad value for {key}: {raw!r}", lineno, path) from None
    raise SceneParseError(f"unknown parameter {key!r}", lineno, path)


def _kwargs(tokens, lineno, path):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise SceneParseError(f"expected key=value, got {tok!r}", lineno, path)
        k, v = tok.split("=", 1)
        out[k] = _parse_value(k, v, lineno, path)
    return out


def _offset(m, kw):
    off = kw.pop("offset", None)
    return m.transformed(np.eye(3), off) if off is not None else m


def parse_scene(text, path=None) -> SceneDescription:
    desc = SceneDescription()
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = lines[i].split("#", 1)[0].strip()
        i += 1
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "resolution":
                if len(rest) != 2:
                    raise SceneParseError("resolution takes W H", lineno, path)
                desc.resolution = (int(rest[0]), int(rest[1]))
            elif head == "frames":
                desc.n_frames = int(rest[0])
                if desc.n_frames < 1:
                    raise SceneParseError("frames must be positive", lineno, path)
            elif head == "mesh":
                if len(rest) < 2 or rest[0] not in ("fg", "bg"):
                    raise SceneParseError("mesh needs a tag (fg|bg) and a primitive", lineno, path)
                tag, prim, args = rest[0], rest[1], rest[2:]
                if prim == "inline":
                    verts, cols, faces = [], [], []
                    while True:
                        if i >= len(lines):
                            raise SceneParseError("unterminated inline mesh (missing 'end')", lineno, path)
                        sub = lines[i].split("#", 1)[0].split()
                        i += 1
                        if not sub:
                            continue
                        if sub[0] == "end":
                            break
                        if sub[0] == "v" and len(sub) == 7:
                            vals = [float(x) for x in sub[1:]]
                            verts.append(vals[:3])
                            cols.append(vals[3:])
                        elif sub[0] == "f" and len(sub) == 4:
                            faces.append([int(x) for x in sub[1:]])
                        else:
                            raise SceneParseError(f"bad inline mesh row {' '.join(sub)!r}", i, path)
                    try:
                        m = _mesh.Mesh(np.array(verts), np.array(faces), np.array(cols))
                    except ContractError as e:
                        raise SceneParseError(str(e), lineno, path) from None
                else:
                    kw = _kwargs(args, lineno, path)
                    if prim == "quad":
                        m = _offset(_mesh.quad(kw.pop("width", 1.0), kw.pop("height", 1.0), kw.pop("color", (1, 1, 1))), kw)
                    elif prim == "box":
                        m = _offset(_mesh.box(kw.pop("size", 1.0), kw.pop("front", (1, 0, 0)), kw.pop("back", (0, 0, 1))), kw)
                    elif prim == "checker-plane":
                        m = _mesh.checker_plane(
                            kw.pop("size", 8.0),
                            kw.pop("tiles", 8),
                            kw.pop("color_a", (0.9, 0.9, 0.9)),
                            kw.pop("color_b", (0.2, 0.2, 0.2)),
                            kw.pop("height", 0.0),
                        )
                    else:
                        raise SceneParseError(f"unknown primitive {prim!r}", lineno, path)
                    if kw:
                        raise SceneParseError(f"unused parameters for {prim}: {sorted(kw)}", lineno, path)
                (desc.fg_parts if tag == "fg" else desc.bg_parts).append(m)
            elif head == "key":
                if not rest:
                    raise SceneParseError("key needs a frame", lineno, path)
                frame = rest[0] if rest[0] == "end" else int(rest[0])
                kw = _kwargs(rest[1:], lineno, path)
                axis = kw.get("axis", (0.0, 1.0, 0.0))
                if np.linalg.norm(axis) == 0:
                    raise SceneParseError("rotation axis must be non-zero", lineno, path)
                desc.keys.append(
                    (frame, kw.get("translate", (0.0, 0.0, 0.0)), axis, math.radians(kw.get("angle", 0.0)), kw.get("scale", 1.0))
                )
            elif head == "camera":
                desc.camera = _kwargs(rest, lineno, path)
            elif head == "trajectory":
                if not rest or rest[0] not in TRAJECTORY_KINDS:
                    raise SceneParseError(f"trajectory kind must be one of {TRAJECTORY_KINDS}", lineno, path)
                kw = _kwargs(rest[1:], lineno, path)
                params = {}
                if "angle" in kw:
                    params["total_angle"] = math.radians(kw.pop("angle"))
                if "fov_end" in kw:
                    params["fov_end"] = math.radians(kw.pop("fov_end"))
                params.update(kw)
                desc.trajectory = (rest[0], params)
            else:
                raise SceneParseError(f"unknown statement {head!r}", lineno, path)
        except SceneParseError:
            raise
        except (ValueError, IndexError, ScenevidError) as e:
            raise SceneParseError(str(e), lineno, path) from None
    return desc


def load_scene(path) -> SceneDescription:
    path = Path(path)
    return parse_scene(path.read_text(), path=str(path))
