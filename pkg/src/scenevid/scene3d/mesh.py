"""Triangle meshes with per-vertex colors and a few procedural primitives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64
    vertex_colors: np.ndarray  # (V, 3) in [0, 1]

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        c = np.asarray(self.vertex_colors, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "vertex_colors", c)
        if len(c) != len(v):
            raise ContractError(f"{len(c)} colors for {len(v)} vertices")
        if len(f):
            if f.min() < 0 or f.max() >= len(v):
                raise ContractError("face index out of range")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ContractError("degenerate face (repeated vertex index)")
        if not np.all(np.isfinite(v)):
            raise ContractError("non-finite vertex")
        if c.size and (c.min() < 0.0 or c.max() > 1.0):
            raise ContractError("vertex colors must lie in [0, 1]")

    @property
    def n_vertices(self):
        return len(self.vertices)

    def transformed(self, rotation, translation, scale=1.0) -> "Mesh":
        v = scale * self.vertices @ np.asarray(rotation).T + np.asarray(translation)
        return Mesh(v, self.faces, self.vertex_colors)

    def recolored(self, colors) -> "Mesh":
        return Mesh(self.vertices, self.faces, colors)


def merge(meshes) -> Mesh:
    meshes = list(meshes)
    if not meshes:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)))
    offsets = np.cumsum([0] + [m.n_vertices for m in meshes[:-1]])
    return Mesh(
        np.concatenate([m.vertices for m in meshes]),
        np.concatenate([m.faces + o for m, o in zip(meshes, offsets)]),
        np.concatenate([m.vertex_colors for m in meshes]),
    )


def quad(width=1.0, height=1.0, color=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> Mesh:
    """Axis-aligned quad in the xy-plane (normal along z)."""
    w, h = width / 2.0, height / 2.0
    v = np.array([[-w, -h, 0.0], [w, -h, 0.0], [w, h, 0.0], [-w, h, 0.0]]) + np.asarray(center, float)
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(v, faces, np.tile(np.asarray(color, float), (4, 1)))


_BOX_FACES = [
    # (normal axis, sign): corner order gives the quad's outline
    ((2, +1), [(-1, -1), (1, -1), (1, 1), (-1, 1)]),
    ((2, -1), [(1, -1), (-1, -1), (-1, 1), (1, 1)]),
    ((0, +1), [(-1, -1), (1, -1), (1, 1), (-1, 1)]),
    ((0, -1), [(1, -1), (-1, -1), (-1, 1), (1, 1)]),
    ((1, +1), [(-1, -1), (1, -1), (1, 1), (-1, 1)]),
    ((1, -1), [(1, -1), (-1, -1), (-1, 1), (1, 1)]),
]


def box(size=1.0, front=(1.0, 0.0, 0.0), back=(0.0, 0.0, 1.0)) -> Mesh:
    """Cube with separate vertices per face.

    Vertices on the +z half get ``front`` color, the -z half ``back``, so the
    +z face is solid front color, the -z face solid back color and the four
    side faces blend between them.
    """
    s = size / 2.0
    verts, faces = [], []
    for (axis, sign), corners in _BOX_FACES:
        others = [a for a in range(3) if a != axis]
        base = len(verts)
        for a, b in corners:
            p = [0.0, 0.0, 0.0]
            p[axis] = sign * s
            p[others[0]] = a * s
            p[others[1]] = b * s
            verts.append(p)
        faces += [[base, base + 1, base + 2], [base, base + 2, base + 3]]
    verts = np.array(verts)
    colors = np.where(verts[:, 2:3] > 0, np.asarray(front, float), np.asarray(back, float))
    return Mesh(verts, np.array(faces), colors)


def checker_plane(size=8.0, tiles=8, color_a=(0.9, 0.9, 0.9), color_b=(0.2, 0.2, 0.2), height=0.0) -> Mesh:
    """Horizontal checkerboard in the xz-plane at y = ``height``.

    Each tile owns its four vertices so colors stay flat per tile.
    """
    step = size / tiles
    verts, faces, colors = [], [], []
    for i in range(tiles):
        for j in range(tiles):
            x0, z0 = -size / 2 + i * step, -size / 2 + j * step
            base = len(verts)
            verts += [[x0, height, z0], [x0 + step, height, z0], [x0 + step, height, z0 + step], [x0, height, z0 + step]]
            col = color_a if (i + j) % 2 == 0 else color_b
            colors += [col] * 4
            faces += [[base, base + 1, base + 2], [base, base + 2, base + 3]]
    return Mesh(np.array(verts), np.array(faces), np.array(colors, dtype=float))


def empty_mesh() -> Mesh:
    return merge([])
