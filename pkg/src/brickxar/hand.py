"""Hand detection and occlusion: CbCr seed segmentation on a screen grid,
hole filling, small-blob removal, and camera-facing hexagon occluders.

The chrominance frame may be at a lower resolution than the color frame
(half resolution by default); grid sample points are given in screen pixels
and scaled into the chrominance raster when sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BoundsError, NoSeedError
from .geometry import CameraIntrinsics
from .model import Mesh

__all__ = [
    "CbCrFrame",
    "ColorSeed",
    "HandGrid",
    "HexOccluder",
    "DEFAULT_TOLERANCE",
    "DEFAULT_CELL_PX",
    "add_seed",
    "segment",
    "refine_mask",
    "default_min_blob_cells",
    "generate_hex_occluders",
    "hex_mesh_camera_frame",
    "rgb_to_cbcr",
    "detect_hand",
]

DEFAULT_TOLERANCE = 12.0
DEFAULT_CELL_PX = 10
HEX_RADIUS_FACTOR = 0.75       # circumradius = 0.75 x cell diagonal
DEFAULT_HEX_DEPTH_MM = 100.0   # used when no guide brick is visible


@dataclass(frozen=True)
class CbCrFrame:
    """(h, w, 2) uint8 raster of (Cb, Cr); full-range [0..255]."""

    data: np.ndarray
    screen_width: int
    screen_height: int

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.uint8)
        if d.ndim != 3 or d.shape[2] != 2 or d.shape[0] == 0 or d.shape[1] == 0:
            raise ValueError("CbCr raster must be (h, w, 2)")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    def sample_screen(self, u: float, v: float) -> tuple[int, int]:
        """(Cb, Cr) at a screen-pixel position."""
        h, w = self.data.shape[:2]
        x = int(u * w / self.screen_width)
        y = int(v * h / self.screen_height)
        if not (0 <= x < w and 0 <= y < h):
            raise BoundsError(f"({u}, {v}) outside the frame")
        cb, cr = self.data[y, x]
        return int(cb), int(cr)


@dataclass(frozen=True)
class ColorSeed:
    cb: float
    cr: float
    tol_cb: float = DEFAULT_TOLERANCE
    tol_cr: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        if self.tol_cb <= 0 or self.tol_cr <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class HandGrid:
    """Occupancy lattice over the screen; one sample per cell center pixel."""

    cell_px: int
    cols: int
    rows: int
    occupancy: np.ndarray  # (rows, cols) bool

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy, dtype=bool)
        if occ.shape != (self.rows, self.cols):
            raise ValueError("occupancy shape mismatch")
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)

    @staticmethod
    def empty(width_px: int, height_px: int, cell_px: int = DEFAULT_CELL_PX) -> "HandGrid":
        cols = math.ceil(width_px / cell_px)
        rows = math.ceil(height_px / cell_px)
        return HandGrid(cell_px, cols, rows, np.zeros((rows, cols), dtype=bool))

    def cell_center_px(self, row: int, col: int) -> tuple[float, float]:
        return ((col + 0.5) * self.cell_px, (row + 0.5) * self.cell_px)

    def with_occupancy(self, occ: np.ndarray) -> "HandGrid":
        return HandGrid(self.cell_px, self.cols, self.rows, occ)


@dataclass(frozen=True)
class HexOccluder:
    center_screen: tuple[float, float]
    circumradius_px: float
    depth_mm: float


def add_seed(
    seeds: list[ColorSeed],
    touch: tuple[float, float],
    frame: CbCrFrame,
    tol_cb: float = DEFAULT_TOLERANCE,
    tol_cr: float = DEFAULT_TOLERANCE,
) -> list[ColorSeed]:
    """Append the color under the touch; only the 2 most recent seeds survive."""
    cb, cr = frame.sample_screen(touch[0], touch[1])
    out = list(seeds) + [ColorSeed(cb, cr, tol_cb, tol_cr)]
    return out[-2:]


def segment(frame: CbCrFrame, seeds: list[ColorSeed], grid: HandGrid) -> HandGrid:
    """Cell occupied iff its center pixel matches any seed's CbCr box."""
    if not seeds:
        raise NoSeedError("segmentation requires at least one color seed")
    h, w = frame.data.shape[:2]
    cols = np.arange(grid.cols)
    rows = np.arange(grid.rows)
    ux = ((cols + 0.5) * grid.cell_px) * w / frame.screen_width
    vy = ((rows + 0.5) * grid.cell_px) * h / frame.screen_height
    xi = np.clip(ux.astype(int), 0, w - 1)
    yi = np.clip(vy.astype(int), 0, h - 1)
    cb = frame.data[np.ix_(yi, xi)][:, :, 0].astype(np.int16)
    cr = frame.data[np.ix_(yi, xi)][:, :, 1].astype(np.int16)
    occ = np.zeros((grid.rows, grid.cols), dtype=bool)
    for s in seeds:
        occ |= (np.abs(cb - s.cb) <= s.tol_cb) & (np.abs(cr - s.cr) <= s.tol_cr)
    return grid.with_occupancy(occ)


_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def default_min_blob_cells(grid: HandGrid) -> int:
    return max(4, int(0.005 * grid.rows * grid.cols))


def refine_mask(grid: HandGrid, min_blob_cells: int | None = None) -> HandGrid:
    """Fill enclosed holes, then drop 4-connected blobs below the size floor."""
    if min_blob_cells is None:
        min_blob_cells = default_min_blob_cells(grid)
    occ = grid.occupancy.copy()
    # hole filling: empty cells not reachable from the border through empty cells
    empty = ~occ
    labels, n = ndimage.label(empty, structure=_FOUR_CONN)
    if n:
        border = np.zeros_like(empty)
        border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
        reachable = np.unique(labels[border & empty])
        hole = empty & ~np.isin(labels, reachable)
        occ |= hole
    # blob removal
    labels, n = ndimage.label(occ, structure=_FOUR_CONN)
    if n:
        sizes = ndimage.sum_labels(np.ones_like(occ, dtype=np.int64), labels, range(1, n + 1))
        small = np.nonzero(sizes < min_blob_cells)[0] + 1
        occ &= ~np.isin(labels, small)
    return grid.with_occupancy(occ)


def generate_hex_occluders(
    grid: HandGrid,
    k: CameraIntrinsics,
    scene_min_guide_depth_mm: float | None = None,
) -> list[HexOccluder]:
    """One camera-facing hexagon per occupied cell, gap-free by overlap."""
    radius = HEX_RADIUS_FACTOR * grid.cell_px * math.sqrt(2.0)
    if scene_min_guide_depth_mm is not None:
        depth = 0.5 * (2.0 * k.near_mm + scene_min_guide_depth_mm)
        if depth >= scene_min_guide_depth_mm:  # guide hugging the near plane
            depth = 0.5 * (k.near_mm + scene_min_guide_depth_mm)
    else:
        depth = DEFAULT_HEX_DEPTH_MM
    out = []
    for row, col in zip(*np.nonzero(grid.occupancy)):
        out.append(
            HexOccluder(grid.cell_center_px(int(row), int(col)), radius, depth)
        )
    return out


def hex_mesh_camera_frame(hx: HexOccluder, k: CameraIntrinsics) -> Mesh:
    """Billboard hexagon in the camera frame at the occluder's depth."""
    u, v = hx.center_screen
    d = hx.depth_mm
    cx = (u - k.cx) * d / k.fx
    cy = (v - k.cy) * d / k.fy
    r = hx.circumradius_px * d / k.fx
    verts = [np.array([cx, cy, d])]
    for i in range(6):
        a = math.pi / 6 + 2 * math.pi * i / 6
        verts.append(np.array([cx + r * math.cos(a), cy + r * math.sin(a), d]))
    # clockwise fan in (x, y-down) so the face normal points at the camera
    tris = [(0, 1 + (i + 1) % 6, 1 + i) for i in range(6)]
    return Mesh(np.array(verts), np.array(tris, dtype=np.int32))


def hexes_mesh_camera_frame(hexes: list[HexOccluder], k: CameraIntrinsics) -> Mesh:
    """All billboard hexagons merged into one camera-frame mesh."""
    uv = np.array([hx.center_screen for hx in hexes], dtype=float)
    d = np.array([hx.depth_mm for hx in hexes], dtype=float)
    rad = np.array([hx.circumradius_px for hx in hexes], dtype=float) * d / k.fx
    cx = (uv[:, 0] - k.cx) * d / k.fx
    cy = (uv[:, 1] - k.cy) * d / k.fy
    ang = math.pi / 6 + 2.0 * math.pi * np.arange(6) / 6.0
    verts = np.empty((len(hexes), 7, 3))
    verts[:, 0, 0] = cx
    verts[:, 0, 1] = cy
    verts[:, 1:, 0] = cx[:, None] + rad[:, None] * np.cos(ang)
    verts[:, 1:, 1] = cy[:, None] + rad[:, None] * np.sin(ang)
    verts[:, :, 2] = d[:, None]
    # clockwise fans in (x, y-down) so the face normals point at the camera
    fan = np.array([(0, 1 + (i + 1) % 6, 1 + i) for i in range(6)], dtype=np.int32)
    tris = fan[None, :, :] + 7 * np.arange(len(hexes), dtype=np.int32)[:, None, None]
    return Mesh(verts.reshape(-1, 3), tris.reshape(-1, 3))


def hex_coverage_mask(hexes: list[HexOccluder], width: int, height: int) -> np.ndarray:
    """Screen-space union of the hexagons (the rendered hand-detection area)."""
    import cv2

    mask = np.zeros((height, width), dtype=np.uint8)
    for hx in hexes:
        u, v = hx.center_screen
        pts = np.array(
            [
                [
                    u + hx.circumradius_px * math.cos(math.pi / 6 + i * math.pi / 3),
                    v + hx.circumradius_px * math.sin(math.pi / 6 + i * math.pi / 3),
                ]
                for i in range(6)
            ]
        )
        cv2.fillConvexPoly(mask, np.round(pts).astype(np.int32), 1)
    return mask.astype(bool)


def rgb_to_cbcr(rgb: np.ndarray, downsample: int = 2) -> np.ndarray:
    """Full-range BT.601 chrominance of an RGB8 image, block-downsampled.

    Returns (h/downsample, w/downsample, 2) uint8.
    """
    img = rgb.astype(np.float64)
    r, g, b = img[:, :, 0], img[:, :, 1], img[:, :, 2]
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    out = np.stack([cb, cr], axis=2)
    if downsample > 1:
        h = (out.shape[0] // downsample) * downsample
        w = (out.shape[1] // downsample) * downsample
        out = out[:h, :w].reshape(
            h // downsample, downsample, w // downsample, downsample, 2
        ).mean(axis=(1, 3))
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def detect_hand(
    frame: CbCrFrame,
    seeds: list[ColorSeed],
    k: CameraIntrinsics,
    cell_px: int = DEFAULT_CELL_PX,
    min_blob_cells: int | None = None,
    scene_min_guide_depth_mm: float | None = None,
) -> tuple[HandGrid, list[HexOccluder]]:
    """Full per-frame hand pass: segment -> refine -> hexagon generation."""
    grid = HandGrid.empty(frame.screen_width, frame.screen_height, cell_px)
    occ = segment(frame, seeds, grid)
    refined = refine_mask(occ, min_blob_cells)
    return refined, generate_hex_occluders(refined, k, scene_min_guide_depth_mm)
