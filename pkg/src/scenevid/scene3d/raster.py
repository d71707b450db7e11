"""Software z-buffer rasterizer producing guidance packs (RGB, depth, masks)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError
from .camera import Camera, RigidTransform, make_camera_trajectory
from .mesh import Mesh


@dataclass(frozen=True)
class GuidancePack:
    rgb: np.ndarray  # (H, W, 3) float64 in [0, 1]
    depth: np.ndarray  # (H, W) camera-space z, 0 where nothing rendered
    coverage_mask: np.ndarray  # (H, W) bool
    fg_mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        if not np.array_equal(self.depth > 0, self.coverage_mask):
            raise ContractError("depth must be positive exactly on covered pixels")
        if np.any(self.fg_mask & ~self.coverage_mask):
            raise ContractError("fg_mask must be a subset of coverage_mask")

    @property
    def resolution(self):
        h, w = self.depth.shape
        return w, h


@dataclass(frozen=True)
class TaggedMesh:
    mesh: Mesh
    transform: RigidTransform = RigidTransform()
    foreground: bool = False


def _clip_near(pts, cols, near):
    """Clip a camera-space triangle against z >= near (Sutherland-Hodgman)."""
    out_p, out_c = [], []
    n = len(pts)
    for i in range(n):
        p, q = pts[i], pts[(i + 1) % n]
        cp, cq = cols[i], cols[(i + 1) % n]
        p_in, q_in = p[2] >= near, q[2] >= near
        if p_in:
            out_p.append(p)
            out_c.append(cp)
        if p_in != q_in:
            s = (near - p[2]) / (q[2] - p[2])
            x = p + s * (q - p)
            x[2] = near
            out_p.append(x)
            out_c.append(cp + s * (cq - cp))
    return out_p, out_c


def _edge(a, b, px, py):
    """Edge function with canonical endpoint order so shared edges cancel exactly."""
    if (a[0], a[1]) > (b[0], b[1]):
        return -((a[0] - b[0]) * (py - b[1]) - (a[1] - b[1]) * (px - b[0]))
    return (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])


def _is_top_left(a, b, sign):
    nx, ny = -(b[1] - a[1]) * sign, (b[0] - a[0]) * sign
    return nx > 0 or (nx == 0 and ny > 0)


def _raster_triangle(s, z, c, zbuf, rgb, owner, tag, far):
    h, w = zbuf.shape
    x0 = max(int(np.floor(min(s[:, 0]) - 0.5)), 0)
    x1 = min(int(np.ceil(max(s[:, 0]) - 0.5)), w - 1)
    y0 = max(int(np.floor(min(s[:, 1]) - 0.5)), 0)
    y1 = min(int(np.ceil(max(s[:, 1]) - 0.5)), h - 1)
    if x0 > x1 or y0 > y1:
        return
    py, px = np.mgrid[y0 : y1 + 1, x0 : x1 + 1].astype(np.float64)
    px += 0.5
    py += 0.5
    area = _edge(s[0], s[1], s[2][0], s[2][1])
    if area == 0:
        return
    sign = 1.0 if area > 0 else -1.0
    # e[i] is the edge opposite vertex i
    pairs = ((1, 2), (2, 0), (0, 1))
    e = [sign * _edge(s[a], s[b], px, py) for a, b in pairs]
    inside = np.ones(px.shape, dtype=bool)
    for (a, b), ei in zip(pairs, e):
        inside &= (ei > 0) | ((ei == 0) & _is_top_left(s[a], s[b], sign))
    if not inside.any():
        return
    total = e[0] + e[1] + e[2]
    lam = [ei[inside] / total[inside] for ei in e]
    inv_z = lam[0] / z[0] + lam[1] / z[1] + lam[2] / z[2]
    depth = 1.0 / inv_z
    iy, ix = np.nonzero(inside)
    iy += y0
    ix += x0
    win = (depth < zbuf[iy, ix]) & (depth <= far)
    iy, ix, depth = iy[win], ix[win], depth[win]
    color = lam[0][win, None] * c[0] + lam[1][win, None] * c[1] + lam[2][win, None] * c[2]
    zbuf[iy, ix] = depth
    rgb[iy, ix] = np.clip(color, 0.0, 1.0)
    owner[iy, ix] = tag


def rasterize(meshes, camera: Camera, resolution) -> GuidancePack:
    """Render tagged meshes with perspective projection and a z-buffer.

    ``meshes`` is a sequence of :class:`TaggedMesh` (or ``(mesh, transform,
    foreground)`` tuples). A pixel is covered iff its center lies inside a
    projected triangle, shared edges resolved by the top-left rule.
    """
    w, h = (int(resolution[0]), int(resolution[1]))
    if w <= 0 or h <= 0:
        raise ConfigError("resolution must be positive")
    if not isinstance(camera, Camera):
        raise ConfigError("camera must be a Camera")
    if abs(camera.aspect - w / h) > 1e-6:
        raise ConfigError(f"camera aspect {camera.aspect} does not match resolution {w}x{h}")
    k = camera.intrinsics(w, h)
    zbuf = np.full((h, w), np.inf)
    rgb = np.zeros((h, w, 3))
    owner = np.zeros((h, w), dtype=np.int8)  # 0 none, 1 background, 2 foreground
    for item in meshes:
        tm = item if isinstance(item, TaggedMesh) else TaggedMesh(*item)
        tag = 2 if tm.foreground else 1
        pts_cam = camera.world_to_camera(tm.transform.apply(tm.mesh.vertices))
        for face in tm.mesh.faces:
            p = pts_cam[face]
            cols = tm.mesh.vertex_colors[face]
            if np.all(p[:, 2] < camera.near):
                continue
            if np.any(p[:, 2] < camera.near):
                poly_p, poly_c = _clip_near(list(p), list(cols), camera.near)
            else:
                poly_p, poly_c = list(p), list(cols)
            poly_p = np.array(poly_p)
            scr = np.stack(
                [k["fx"] * poly_p[:, 0] / poly_p[:, 2] + k["cx"], k["fy"] * poly_p[:, 1] / poly_p[:, 2] + k["cy"]],
                axis=1,
            )
            for i in range(1, len(poly_p) - 1):
                idx = [0, i, i + 1]
                _raster_triangle(scr[idx], poly_p[idx, 2], [poly_c[j] for j in idx], zbuf, rgb, owner, tag, camera.far)
    covered = owner > 0
    depth = np.where(covered, zbuf, 0.0)
    return GuidancePack(rgb=rgb, depth=depth, coverage_mask=covered, fg_mask=owner == 2)


def invisible_region_mask(pack: GuidancePack) -> np.ndarray:
    """Pixels with no geometry behind them; feature injection is suppressed there."""
    return ~pack.coverage_mask


def foreground_novel_views(fg: Mesh, n_views, radius, resolution=(32, 32), height=0.0, vertical_fov=np.radians(45)):
    """Render the foreground alone from ``n_views`` uniformly spaced azimuths.

    View 0 is the frontal camera at world (0, height, radius) looking at the
    origin; the others orbit about +y in steps of 360/n_views degrees.
    Returns a list of ``(rgb, mask)`` pairs.
    """
    if int(n_views) < 1:
        raise ConfigError("n_views must be >= 1")
    views = []
    for cam in novel_view_cameras(n_views, radius, resolution, height, vertical_fov):
        pack = rasterize([TaggedMesh(fg, foreground=True)], cam, resolution)
        views.append((pack.rgb, pack.coverage_mask))
    return views


def novel_view_cameras(n_views, radius, resolution=(32, 32), height=0.0, vertical_fov=np.radians(45)):
    w, h = resolution
    base = Camera.look_at((0.0, height, radius), (0.0, 0.0, 0.0), vertical_fov=vertical_fov, aspect=w / h)
    return make_camera_trajectory("orbit", base, int(n_views), total_angle=2 * np.pi)
