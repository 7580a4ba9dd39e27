"""Software rasterizer and AR compositor.

Two material classes with fixed semantics:

  * occluder: writes the shared depth buffer only, never color; composited
    pixels keep the camera feed, so real objects appear to hide virtual ones;
  * guide: shaded (flat color, configurable opacity) or wireframe (faces write
    depth only, feature edges drawn as 1-px depth-tested lines); color is
    written only where the fragment survives the full depth buffer.

Rasterization is perspective-correct (1/z interpolation), back-face culled,
and uses a top-left fill rule with half-open right/bottom edges so shared
triangle edges are covered exactly once.  All passes are sequential and
deterministic: identical inputs produce byte-identical frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numba import njit

from .errors import SizeError
from .geometry import CameraIntrinsics, Pose6DoF, pose_compose
from .model import Mesh

__all__ = [
    "MaterialKind",
    "Shaded",
    "Wireframe",
    "Material",
    "RasterOutput",
    "ARFrame",
    "rasterize",
    "composite",
    "visibility_mask",
    "feature_edges",
]


class MaterialKind(Enum):
    GUIDE = "guide"
    OCCLUDER = "occluder"


@dataclass(frozen=True)
class Shaded:
    rgb: tuple[int, int, int]
    opacity: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.opacity <= 1.0):
            raise ValueError("opacity must be in (0, 1]")


@dataclass(frozen=True)
class Wireframe:
    edge_rgb: tuple[int, int, int] = (0, 255, 0)


@dataclass(frozen=True)
class Material:
    kind: MaterialKind
    style: Shaded | Wireframe | None = None

    @staticmethod
    def occluder() -> "Material":
        return Material(MaterialKind.OCCLUDER)

    @staticmethod
    def guide_shaded(rgb, opacity: float = 1.0) -> "Material":
        return Material(MaterialKind.GUIDE, Shaded(tuple(rgb), opacity))

    @staticmethod
    def guide_wireframe(edge_rgb=(0, 255, 0)) -> "Material":
        return Material(MaterialKind.GUIDE, Wireframe(tuple(edge_rgb)))


@dataclass
class RasterOutput:
    color: np.ndarray       # HxWx3 uint8, meaningful only where alpha > 0
    alpha: np.ndarray       # HxW float32 in [0,1]; 0 = transparent background
    depth: np.ndarray       # HxW float32 mm, +inf = empty
    guide_mask: np.ndarray  # HxW bool: guide color written here


@dataclass
class ARFrame:
    composed: np.ndarray    # HxWx3 uint8
    depth: np.ndarray
    guide_mask: np.ndarray


# --- numba kernels -----------------------------------------------------------


@njit(cache=True)
def _edge_accepts_zero(ax, ay, bx, by):
    # anti-symmetric zero-coverage rule: shared edges covered exactly once
    dy = by - ay
    dx = bx - ax
    return dy > 0.0 or (dy == 0.0 and dx < 0.0)


@njit(cache=True)
def _raster_faces(uv, invz, owners, write_owner, depth, owner):
    h, w = depth.shape
    for i in range(uv.shape[0]):
        x0, y0 = uv[i, 0, 0], uv[i, 0, 1]
        x1, y1 = uv[i, 1, 0], uv[i, 1, 1]
        x2, y2 = uv[i, 2, 0], uv[i, 2, 1]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area <= 0.0:
            continue  # back-facing or degenerate after reordering
        minx = max(int(math.floor(min(x0, x1, x2) - 0.5)), 0)
        maxx = min(int(math.ceil(max(x0, x1, x2) + 0.5)), w - 1)
        miny = max(int(math.floor(min(y0, y1, y2) - 0.5)), 0)
        maxy = min(int(math.ceil(max(y0, y1, y2) + 0.5)), h - 1)
        if minx > maxx or miny > maxy:
            continue
        iz0, iz1, iz2 = invz[i, 0], invz[i, 1], invz[i, 2]
        e0z = _edge_accepts_zero(x1, y1, x2, y2)
        e1z = _edge_accepts_zero(x2, y2, x0, y0)
        e2z = _edge_accepts_zero(x0, y0, x1, y1)
        for py in range(miny, maxy + 1):
            sy = py + 0.5
            for px in range(minx, maxx + 1):
                sx = px + 0.5
                w0 = (x2 - x1) * (sy - y1) - (y2 - y1) * (sx - x1)
                w1 = (x0 - x2) * (sy - y2) - (y0 - y2) * (sx - x2)
                w2 = (x1 - x0) * (sy - y0) - (y1 - y0) * (sx - x0)
                if (w0 > 0.0 or (w0 == 0.0 and e0z)) and \
                   (w1 > 0.0 or (w1 == 0.0 and e1z)) and \
                   (w2 > 0.0 or (w2 == 0.0 and e2z)):
                    iz = (w0 * iz0 + w1 * iz1 + w2 * iz2) / area
                    if iz <= 0.0:
                        continue
                    z = 1.0 / iz
                    if z < depth[py, px]:
                        depth[py, px] = z
                        if write_owner:
                            owner[py, px] = owners[i]


@njit(cache=True)
def _raster_faces_depth(u, v, invz, tris, depth):
    # depth-only variant reading vertices through the index buffer; corners
    # are taken in reversed order so front faces get positive screen area
    h, w = depth.shape
    for i in range(tris.shape[0]):
        a, b, c = tris[i, 0], tris[i, 1], tris[i, 2]
        x0, y0 = u[c], v[c]
        x1, y1 = u[b], v[b]
        x2, y2 = u[a], v[a]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area <= 0.0:
            continue
        minx = max(int(math.floor(min(x0, x1, x2) - 0.5)), 0)
        maxx = min(int(math.ceil(max(x0, x1, x2) + 0.5)), w - 1)
        miny = max(int(math.floor(min(y0, y1, y2) - 0.5)), 0)
        maxy = min(int(math.ceil(max(y0, y1, y2) + 0.5)), h - 1)
        if minx > maxx or miny > maxy:
            continue
        iz0, iz1, iz2 = invz[c], invz[b], invz[a]
        e0z = _edge_accepts_zero(x1, y1, x2, y2)
        e1z = _edge_accepts_zero(x2, y2, x0, y0)
        e2z = _edge_accepts_zero(x0, y0, x1, y1)
        for py in range(miny, maxy + 1):
            sy = py + 0.5
            for px in range(minx, maxx + 1):
                sx = px + 0.5
                w0 = (x2 - x1) * (sy - y1) - (y2 - y1) * (sx - x1)
                w1 = (x0 - x2) * (sy - y2) - (y0 - y2) * (sx - x2)
                w2 = (x1 - x0) * (sy - y0) - (y1 - y0) * (sx - x0)
                if (w0 > 0.0 or (w0 == 0.0 and e0z)) and \
                   (w1 > 0.0 or (w1 == 0.0 and e1z)) and \
                   (w2 > 0.0 or (w2 == 0.0 and e2z)):
                    iz = (w0 * iz0 + w1 * iz1 + w2 * iz2) / area
                    if iz <= 0.0:
                        continue
                    z = 1.0 / iz
                    if z < depth[py, px]:
                        depth[py, px] = z


@njit(cache=True)
def _raster_lines(seg_uv, seg_invz, depth, hit, bias_rel, bias_abs):
    h, w = depth.shape
    for i in range(seg_uv.shape[0]):
        x0, y0 = seg_uv[i, 0, 0], seg_uv[i, 0, 1]
        x1, y1 = seg_uv[i, 1, 0], seg_uv[i, 1, 1]
        iz0, iz1 = seg_invz[i, 0], seg_invz[i, 1]
        n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
        for s in range(n + 1):
            t = s / n
            x = x0 + (x1 - x0) * t
            y = y0 + (y1 - y0) * t
            px = int(math.floor(x))
            py = int(math.floor(y))
            if px < 0 or px >= w or py < 0 or py >= h:
                continue
            iz = iz0 + (iz1 - iz0) * t
            if iz <= 0.0:
                continue
            z = 1.0 / iz
            if z <= depth[py, px] * (1.0 + bias_rel) + bias_abs:
                hit[py, px] = True


# --- geometry preparation ----------------------------------------------------


def _clip_triangles_near(vc: np.ndarray, tris: np.ndarray, near: float) -> np.ndarray:
    """Camera-space triangles clipped against z = near; returns (m,3,3) vertices."""
    corners = vc[tris]  # (m,3,3)
    z = corners[:, :, 2]
    front = z > near
    nfront = front.sum(axis=1)
    out = [corners[nfront == 3]]
    for ti in np.nonzero((nfront == 1) | (nfront == 2))[0]:
        poly = []
        cs = corners[ti]
        for a in range(3):
            b = (a + 1) % 3
            pa, pb = cs[a], cs[b]
            if pa[2] > near:
                poly.append(pa)
            if (pa[2] > near) != (pb[2] > near):
                t = (near - pa[2]) / (pb[2] - pa[2])
                poly.append(pa + t * (pb - pa))
        for k in range(1, len(poly) - 1):
            out.append(np.stack([poly[0], poly[k], poly[k + 1]])[None])
    return np.concatenate(out, axis=0) if out else np.zeros((0, 3, 3))


def _project_tris(corners: np.ndarray, k: CameraIntrinsics):
    """Screen-space uv and 1/z for clipped camera-space triangles.

    Triangles are reordered to positive screen-space signed area when their
    camera-space winding is front-facing; back faces are dropped.
    """
    if corners.shape[0] == 0:
        return np.zeros((0, 3, 2)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    z = corners[:, :, 2]
    u = k.fx * corners[:, :, 0] / z + k.cx
    v = k.fy * corners[:, :, 1] / z + k.cy
    uv = np.stack([u, v], axis=2)
    area = (uv[:, 1, 0] - uv[:, 0, 0]) * (uv[:, 2, 1] - uv[:, 0, 1]) - (
        uv[:, 1, 1] - uv[:, 0, 1]
    ) * (uv[:, 2, 0] - uv[:, 0, 0])
    # front faces (outward CCW winding) have negative z-cross in camera space,
    # which maps to negative screen area; flip them to positive for the kernel
    front = area < 0.0
    uv = uv[front][:, ::-1, :].copy()
    invz = (1.0 / z)[front][:, ::-1].copy()
    return uv, invz, np.nonzero(front)[0]


_EDGE_CACHE: dict[int, np.ndarray] = {}


def feature_edges(mesh: Mesh, angle_deg: float = 20.0) -> np.ndarray:
    """(e,2) vertex-index pairs: boundary edges plus creases over ``angle_deg``."""
    key = id(mesh)
    cached = _EDGE_CACHE.get(key)
    if cached is not None:
        return cached
    tris = mesh.triangles
    verts = mesh.vertices
    v0, v1, v2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    n = np.cross(v1 - v0, v2 - v0)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    n = n / norms
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for fi, (a, b, c) in enumerate(tris):
        for e in ((a, b), (b, c), (c, a)):
            ek = (min(e), max(e))
            edge_faces.setdefault(ek, []).append(fi)
    cos_thresh = math.cos(math.radians(angle_deg))
    keep = []
    for ek, faces in edge_faces.items():
        if len(faces) != 2 or float(n[faces[0]] @ n[faces[1]]) < cos_thresh:
            keep.append(ek)
    result = np.array(sorted(keep), dtype=np.int64).reshape(-1, 2)
    _EDGE_CACHE[key] = result
    return result


def _clip_segments_near(p: np.ndarray, q: np.ndarray, near: float):
    """Clip camera-space segments to z > near; returns filtered (p, q)."""
    zp, zq = p[:, 2], q[:, 2]
    keep = (zp > near) | (zq > near)
    p, q, zp, zq = p[keep].copy(), q[keep].copy(), zp[keep], zq[keep]
    for arr, za, other, zb in ((p, zp, q, zq), (q, zq, p, zp)):
        behind = za <= near
        if behind.any():
            t = (near * (1 + 1e-9) - za[behind]) / (zb[behind] - za[behind])
            arr[behind] = arr[behind] + t[:, None] * (other[behind] - arr[behind])
    return p, q


# --- passes ------------------------------------------------------------------


def rasterize(
    items: list[tuple[Mesh, Pose6DoF, Material]],
    camera_pose: Pose6DoF,
    k: CameraIntrinsics,
) -> RasterOutput:
    """Render meshes over a transparent background with a shared depth buffer.

    ``items`` entries are (mesh, world transform, material); occluders run
    first (depth only), then guides depth-test against the full buffer.
    """
    h, w = k.height, k.width
    depth = np.full((h, w), np.inf, dtype=np.float32)
    owner = np.full((h, w), -1, dtype=np.int32)
    dummy = np.zeros(0, dtype=np.int32)

    def to_camera(mesh: Mesh, transform: Pose6DoF) -> np.ndarray:
        # composed rigid transform applied directly; skips building (and
        # re-validating) an intermediate Pose6DoF per item
        rot = camera_pose.rotation @ transform.rotation
        t = camera_pose.rotation @ transform.translation + camera_pose.translation
        return mesh.vertices @ rot.T + t

    occluders = [it for it in items if it[2].kind is MaterialKind.OCCLUDER]
    guides = [it for it in items if it[2].kind is MaterialKind.GUIDE]

    for mesh, transform, _mat in occluders:
        vc = to_camera(mesh, transform)
        if vc.shape[0] == 0:
            continue
        if vc[:, 2].min() > k.near_mm:
            # nothing crosses the near plane: project per vertex and let the
            # indexed kernel cull and fill (no per-corner gather arrays)
            z = vc[:, 2]
            u = k.fx * vc[:, 0] / z + k.cx
            v = k.fy * vc[:, 1] / z + k.cy
            _raster_faces_depth(
                u, v, 1.0 / z, np.ascontiguousarray(mesh.triangles), depth
            )
        else:
            corners = _clip_triangles_near(vc, mesh.triangles, k.near_mm)
            uv, invz, _ = _project_tris(corners, k)
            if uv.shape[0]:
                _raster_faces(uv, invz, dummy, False, depth, owner)

    # guide faces: depth + ownership (wireframe faces own depth but no color)
    face_rgba: list[tuple[float, float, float, float]] = []
    edge_jobs: list[tuple[np.ndarray, np.ndarray, tuple[int, int, int]]] = []
    g_uv, g_invz, g_owners = [], [], []
    for mesh, transform, mat in guides:
        vc = to_camera(mesh, transform)
        corners = _clip_triangles_near(vc, mesh.triangles, k.near_mm)
        uv, invz, kept = _project_tris(corners, k)
        if uv.shape[0]:
            if isinstance(mat.style, Shaded):
                # flat headlight shading from the camera-space face normal
                fn = np.cross(
                    corners[kept][:, 1] - corners[kept][:, 0],
                    corners[kept][:, 2] - corners[kept][:, 0],
                )
                nn = np.linalg.norm(fn, axis=1)
                nn[nn == 0] = 1.0
                facing = np.abs(fn[:, 2]) / nn
                shade = 0.35 + 0.65 * facing
                base = len(face_rgba)
                r, g, b = mat.style.rgb
                for s in shade:
                    face_rgba.append(
                        (min(r * s, 255.0), min(g * s, 255.0), min(b * s, 255.0),
                         mat.style.opacity)
                    )
                owners = (base + np.arange(uv.shape[0])).astype(np.int32)
            else:
                owners = np.full(uv.shape[0], -2, dtype=np.int32)  # depth-only
            g_uv.append(uv)
            g_invz.append(invz)
            g_owners.append(owners)
        if isinstance(mat.style, Wireframe):
            edges = feature_edges(mesh)
            if edges.shape[0]:
                p, q = _clip_segments_near(vc[edges[:, 0]], vc[edges[:, 1]], k.near_mm)
                if p.shape[0]:
                    seg_uv = np.stack(
                        [
                            np.stack([k.fx * p[:, 0] / p[:, 2] + k.cx,
                                      k.fy * p[:, 1] / p[:, 2] + k.cy], axis=1),
                            np.stack([k.fx * q[:, 0] / q[:, 2] + k.cx,
                                      k.fy * q[:, 1] / q[:, 2] + k.cy], axis=1),
                        ],
                        axis=1,
                    )
                    seg_invz = np.stack([1.0 / p[:, 2], 1.0 / q[:, 2]], axis=1)
                    edge_jobs.append((seg_uv, seg_invz, mat.style.edge_rgb))

    if g_uv:
        _raster_faces(
            np.concatenate(g_uv), np.concatenate(g_invz), np.concatenate(g_owners),
            True, depth, owner,
        )

    color = np.zeros((h, w, 3), dtype=np.uint8)
    alpha = np.zeros((h, w), dtype=np.float32)
    shaded_pix = owner >= 0
    if face_rgba:
        table = np.array(face_rgba, dtype=np.float32)
        idx = owner[shaded_pix]
        color[shaded_pix] = np.round(table[idx, :3]).astype(np.uint8)
        alpha[shaded_pix] = table[idx, 3]
    guide_mask = shaded_pix.copy()

    for seg_uv, seg_invz, edge_rgb in edge_jobs:
        hit = np.zeros((h, w), dtype=np.bool_)
        _raster_lines(seg_uv, seg_invz, depth, hit, 1e-4, 0.5)
        color[hit] = np.array(edge_rgb, dtype=np.uint8)
        alpha[hit] = 1.0
        guide_mask |= hit

    return RasterOutput(color=color, alpha=alpha, depth=depth, guide_mask=guide_mask)


def composite(camera_feed: np.ndarray, overlay: RasterOutput) -> ARFrame:
    """Alpha-blend guide pixels over the feed; occluder pixels keep the feed."""
    if camera_feed.shape[:2] != overlay.depth.shape:
        raise SizeError(
            f"feed {camera_feed.shape[:2]} vs overlay {overlay.depth.shape}"
        )
    composed = camera_feed.copy()
    m = overlay.guide_mask
    if m.any():
        a = overlay.alpha[m][:, None].astype(np.float64)
        blended = a * overlay.color[m] + (1.0 - a) * camera_feed[m]
        composed[m] = np.round(blended).astype(np.uint8)
    return ARFrame(
        composed=composed,
        depth=overlay.depth.copy(),
        guide_mask=overlay.guide_mask.copy(),
    )


def visibility_mask(
    target: tuple[Mesh, Pose6DoF],
    occluders: list[tuple[Mesh, Pose6DoF]],
    camera_pose: Pose6DoF,
    k: CameraIntrinsics,
) -> np.ndarray:
    """Pixels where the target is the nearest surface; equals rasterize's
    guide_mask for the same scene."""
    items: list[tuple[Mesh, Pose6DoF, Material]] = [
        (m, t, Material.occluder()) for m, t in occluders
    ]
    items.append((target[0], target[1], Material.guide_shaded((255, 255, 255))))
    return rasterize(items, camera_pose, k).guide_mask
