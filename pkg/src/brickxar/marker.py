"""Composite fiducial marker: definition, detection, pose estimation, tracking.

The marker is a black rectangle carrying two square pattern blocks (6x6 bit
grids).  Each block contributes 29 features: its 4 outer corners and the 25
interior cell-grid junctions.  Detection binarizes the frame, finds candidate
quads, decodes their bit grids against the spec (under all four rotations),
and refines every predicted feature corner to sub-pixel accuracy, keeping the
ones that pass a local contrast test.  Any subset of features is a valid
detection, so a partially covered marker still tracks.

Pose estimation runs a normalized planar DLT homography, decomposes it with
the intrinsics, then refines with damped least squares on total squared
reprojection error.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, replace
from enum import Enum

import cv2
import numpy as np

from .errors import DegenerateError, DivergenceError, ResolutionError
from .geometry import CameraIntrinsics, Pose6DoF, nearest_rotation, pose_invert

__all__ = [
    "PatternBlock",
    "MarkerSpec",
    "Correspondence",
    "TrackingMode",
    "TrackingState",
    "default_marker_spec",
    "render_marker_image",
    "detect_features",
    "estimate_pose",
    "update_tracking",
    "synthesize_correspondences",
    "Q_MIN",
]

Q_MIN = 0.25  # detected-feature fraction below which tracking is lost

_GRID_N = 6
_DECODE_MARGIN = 40.0   # gray-level separation required between bit classes
_CONTRAST_MIN = 40.0    # per-feature neighborhood contrast floor
_REFINE_MAX_SHIFT = 3.0  # px; refined corners further than this are dropped


@dataclass(frozen=True)
class PatternBlock:
    """n x n bit grid; origin = lower-left corner in marker-plane mm, y up.

    bits[i, j] is the cell at x-index i, y-index j; True = white.
    """

    origin: tuple[float, float]
    bits: np.ndarray
    cell_mm: float

    def __post_init__(self):
        b = np.ascontiguousarray(self.bits, dtype=bool)
        if b.shape != (_GRID_N, _GRID_N):
            raise ValueError(f"bit grid must be {_GRID_N}x{_GRID_N}")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def size_mm(self) -> float:
        return _GRID_N * self.cell_mm

    def corner_mm(self, i: int, j: int) -> tuple[float, float]:
        """Grid junction (i, j), i/j in 0..n, in marker-plane mm."""
        return (self.origin[0] + i * self.cell_mm, self.origin[1] + j * self.cell_mm)

    def cell_color(self, i: int, j: int) -> bool | None:
        """True/False inside the block, None outside (black fill)."""
        if 0 <= i < _GRID_N and 0 <= j < _GRID_N:
            return bool(self.bits[i, j])
        return None


@dataclass(frozen=True)
class MarkerSpec:
    width_mm: float
    height_mm: float
    blocks: tuple[PatternBlock, PatternBlock]

    def __post_init__(self):
        if len(self.blocks) != 2:
            raise ValueError("exactly two pattern blocks required")
        a, b = self.blocks
        ax0, ay0 = a.origin
        bx0, by0 = b.origin
        if not (
            ax0 + a.size_mm <= bx0
            or bx0 + b.size_mm <= ax0
            or ay0 + a.size_mm <= by0
            or by0 + b.size_mm <= ay0
        ):
            raise ValueError("pattern blocks overlap")
        hw, hh = self.width_mm / 2, self.height_mm / 2
        for blk in self.blocks:
            x0, y0 = blk.origin
            if not (-hw <= x0 and x0 + blk.size_mm <= hw and -hh <= y0 and y0 + blk.size_mm <= hh):
                raise ValueError("block outside marker rectangle")

    def features(self) -> list[tuple[int, tuple[float, float]]]:
        """(feature_id, marker-plane mm) for both blocks.

        ids: block_index * 100 + k, k = 0..3 outer corners (ll, lr, ur, ul)
        then 4..28 interior junctions in row-major (i, j) order.
        """
        out = []
        for bi, blk in enumerate(self.blocks):
            n = _GRID_N
            out.append((bi * 100 + 0, blk.corner_mm(0, 0)))
            out.append((bi * 100 + 1, blk.corner_mm(n, 0)))
            out.append((bi * 100 + 2, blk.corner_mm(n, n)))
            out.append((bi * 100 + 3, blk.corner_mm(0, n)))
            k = 4
            for i in range(1, n):
                for j in range(1, n):
                    out.append((bi * 100 + k, blk.corner_mm(i, j)))
                    k += 1
        return out

    def feature_count(self) -> int:
        return len(self.features())

    def to_json(self) -> str:
        return json.dumps(
            {
                "width_mm": self.width_mm,
                "height_mm": self.height_mm,
                "blocks": [
                    {
                        "origin": list(b.origin),
                        "cell_mm": b.cell_mm,
                        "bits": b.bits.astype(int).tolist(),
                    }
                    for b in self.blocks
                ],
            },
            sort_keys=True,
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "MarkerSpec":
        d = json.loads(text)
        blocks = tuple(
            PatternBlock(tuple(b["origin"]), np.array(b["bits"], dtype=bool), b["cell_mm"])
            for b in d["blocks"]
        )
        return MarkerSpec(d["width_mm"], d["height_mm"], blocks)


# Interior 4x4 payloads (ring of white cells is added around them).  Chosen
# so that no 2x2 cell window of the full 6x6 grid is uniform (every interior
# junction is a localizable saddle/corner), 5 junctions per block are true
# saddles (diagonally alternating, refinable without blur bias), and each grid
# differs from every other grid in the set {rotations, reflections} of both
# payloads, keeping block decoding and orientation unambiguous.
_BLOCK_PAYLOADS = (
    np.array(
        [[0, 0, 1, 0],
         [0, 1, 0, 1],
         [1, 0, 1, 0],
         [0, 0, 0, 0]],
        dtype=bool,
    ),
    np.array(
        [[0, 0, 1, 0],
         [1, 1, 0, 1],
         [0, 0, 1, 0],
         [0, 1, 0, 0]],
        dtype=bool,
    ),
)


def _block_bits(index: int) -> np.ndarray:
    """White outer ring around the indexed 4x4 payload."""
    bits = np.ones((_GRID_N, _GRID_N), dtype=bool)
    bits[1:-1, 1:-1] = _BLOCK_PAYLOADS[index]
    return bits


def default_marker_spec() -> MarkerSpec:
    """200 x 150 mm marker: a large block right of a small sacrificial block.

    The small block sits next to the build area (it is the part that gets
    covered as construction progresses); the large block keeps most of the
    marker's feature spread so pose quality degrades gracefully.
    """
    small = PatternBlock(origin=(-96.0, -24.0), bits=_block_bits(0), cell_mm=8.0)
    large = PatternBlock(origin=(-44.0, -72.0), bits=_block_bits(1), cell_mm=24.0)
    return MarkerSpec(width_mm=200.0, height_mm=150.0, blocks=(small, large))


def marker_plane_color(spec: MarkerSpec, x_mm: float, y_mm: float) -> float:
    """Marker albedo at a plane point: 1.0 white cell, 0.0 black fill/cell.

    Points outside the marker rectangle return 0.5 (not part of the marker).
    """
    hw, hh = spec.width_mm / 2, spec.height_mm / 2
    if not (-hw <= x_mm <= hw and -hh <= y_mm <= hh):
        return 0.5
    for blk in spec.blocks:
        i = int(math.floor((x_mm - blk.origin[0]) / blk.cell_mm))
        j = int(math.floor((y_mm - blk.origin[1]) / blk.cell_mm))
        c = blk.cell_color(i, j)
        if c is not None:
            return 1.0 if c else 0.0
    return 0.0


def render_marker_image(spec: MarkerSpec, px_per_mm: float) -> np.ndarray:
    """Printable raster of the marker (HxWx3 uint8); row 0 is the top edge."""
    w = math.ceil(spec.width_mm * px_per_mm)
    h = math.ceil(spec.height_mm * px_per_mm)
    if w <= 0 or h <= 0:
        raise ResolutionError("marker raster would be empty")
    img = np.zeros((h, w, 3), dtype=np.uint8)
    for blk in spec.blocks:
        x0, y0 = blk.origin
        for i in range(_GRID_N):
            for j in range(_GRID_N):
                if not blk.bits[i, j]:
                    continue
                cx0 = (x0 + i * blk.cell_mm + spec.width_mm / 2) * px_per_mm
                cx1 = (x0 + (i + 1) * blk.cell_mm + spec.width_mm / 2) * px_per_mm
                # image rows run top-down; marker y runs up
                cy0 = (spec.height_mm / 2 - (y0 + (j + 1) * blk.cell_mm)) * px_per_mm
                cy1 = (spec.height_mm / 2 - (y0 + j * blk.cell_mm)) * px_per_mm
                img[
                    max(0, round(cy0)): min(h, round(cy1)),
                    max(0, round(cx0)): min(w, round(cx1)),
                ] = 255
    return img


@dataclass(frozen=True)
class Correspondence:
    feature_id: int
    image_point: tuple[float, float]
    marker_point: tuple[float, float]


class TrackingMode(Enum):
    TRACKING = "tracking"
    LOST = "lost"


@dataclass(frozen=True)
class TrackingState:
    mode: TrackingMode
    pose: Pose6DoF          # camera -> marker world (frozen while Lost)
    quality: float
    total_features: int

    @staticmethod
    def initial(total_features: int) -> "TrackingState":
        return TrackingState(TrackingMode.LOST, Pose6DoF.identity(), 0.0, total_features)

    @property
    def extrinsics(self) -> Pose6DoF:
        """World -> camera transform for projection."""
        return pose_invert(self.pose)


# --- detection ---------------------------------------------------------------


def _binarize(gray: np.ndarray) -> np.ndarray:
    """Local midpoint threshold with a global Otsu fallback in flat areas."""
    kernel = np.ones((15, 15), np.uint8)
    lo = cv2.erode(gray, kernel)
    hi = cv2.dilate(gray, kernel)
    contrast_ok = cv2.compare(cv2.subtract(hi, lo), 2 * 15 - 1, cv2.CMP_GT)
    mid = ((lo.astype(np.uint16) + hi) >> 1).astype(np.uint8)
    otsu_t, _ = cv2.threshold(gray, 0, 255, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
    thresh = np.where(contrast_ok, mid, np.uint8(otsu_t))
    return cv2.compare(gray, thresh, cv2.CMP_GT)


def _to_gray(frame: np.ndarray) -> np.ndarray:
    if frame.ndim == 3:
        return cv2.cvtColor(frame, cv2.COLOR_RGB2GRAY)
    return frame


def _candidate_quads(binary: np.ndarray) -> list[np.ndarray]:
    contours, _ = cv2.findContours(binary, cv2.RETR_LIST, cv2.CHAIN_APPROX_SIMPLE)
    quads = []
    for c in contours:
        if cv2.contourArea(c) < 200:
            continue
        approx = cv2.approxPolyDP(c, 0.03 * cv2.arcLength(c, True), True)
        if len(approx) == 4 and cv2.isContourConvex(approx):
            quads.append(approx.reshape(4, 2).astype(np.float64))
    return quads


def _sample_bilinear(gray: np.ndarray, pts: np.ndarray) -> np.ndarray:
    h, w = gray.shape
    x = np.clip(pts[:, 0], 0, w - 1.001)
    y = np.clip(pts[:, 1], 0, h - 1.001)
    x0 = x.astype(int)
    y0 = y.astype(int)
    fx = x - x0
    fy = y - y0
    # gather first, then widen: avoids a full-image float conversion per call
    return (
        gray[y0, x0].astype(np.float64) * (1 - fx) * (1 - fy)
        + gray[y0, x0 + 1].astype(np.float64) * fx * (1 - fy)
        + gray[y0 + 1, x0].astype(np.float64) * (1 - fx) * fy
        + gray[y0 + 1, x0 + 1].astype(np.float64) * fx * fy
    )


_UNIT_CORNERS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float32)


@functools.lru_cache(maxsize=None)
def _unit_grid(n: int) -> np.ndarray:
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    grid = np.stack(
        [(ii.ravel() + 0.5) / n, (jj.ravel() + 0.5) / n], axis=1
    )
    grid.setflags(write=False)
    return grid


def _quick_match(gray: np.ndarray, quad: np.ndarray, spec: MarkerSpec) -> bool:
    """Cheap necessary test for _decode_block success.

    The 16 corner orderings tried by the full decode sample the same physical
    cell centers, permuted by a dihedral symmetry of the grid.  Sampling once
    and comparing all eight symmetries against each block's bit pattern
    therefore rejects non-marker quads without per-orientation homographies.
    """
    n = _GRID_N
    hmat = cv2.getPerspectiveTransform(_UNIT_CORNERS, quad.astype(np.float32))
    pts = cv2.perspectiveTransform(_unit_grid(n)[None], hmat.astype(np.float64))[0]
    vals = _sample_bilinear(gray, pts).reshape(n, n)
    if vals.max() - vals.min() < _DECODE_MARGIN:
        return False  # flat patch: no partition can reach the decode margin
    variants = [np.rot90(vals, r) for r in range(4)]
    variants += [np.rot90(vals.T, r) for r in range(4)]
    for blk in spec.blocks:
        k = int(blk.bits.sum())
        if k == 0 or k == n * n:
            continue
        for v in variants:
            if v[blk.bits].min() - v[~blk.bits].max() >= _DECODE_MARGIN:
                return True
    return False


def _decode_block(
    gray: np.ndarray, quad: np.ndarray, spec: MarkerSpec
) -> tuple[int, np.ndarray] | None:
    """Match a candidate quad against the spec blocks under 4 rotations.

    Returns (block_index, homography mm->px) or None.  The homography maps
    marker-plane mm coordinates of the matched block to image pixels.
    """
    n = _GRID_N
    # cell centers in unit-square block coordinates
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    unit = np.stack(
        [(ii.ravel() + 0.5) / n, (jj.ravel() + 0.5) / n], axis=1
    )  # (n*n, 2) in block (i, j)/n space
    for bi, blk in enumerate(spec.blocks):
        corners_mm = np.array(
            [
                blk.corner_mm(0, 0),
                blk.corner_mm(n, 0),
                blk.corner_mm(n, n),
                blk.corner_mm(0, n),
            ],
            dtype=np.float32,
        )
        expected = blk.bits[ii.ravel(), jj.ravel()]
        # contour orientation is unknown: try both vertex orders x 4 rotations
        for ordering in (quad, quad[::-1]):
          for rot in range(4):
            q = np.roll(ordering, rot, axis=0).astype(np.float32)
            hmat = cv2.getPerspectiveTransform(corners_mm, q)
            centers_mm = np.stack(
                [
                    blk.origin[0] + unit[:, 0] * blk.size_mm,
                    blk.origin[1] + unit[:, 1] * blk.size_mm,
                ],
                axis=1,
            )
            pts = cv2.perspectiveTransform(centers_mm[None].astype(np.float64), hmat.astype(np.float64))[0]
            vals = _sample_bilinear(gray, pts)
            white = vals[expected]
            black = vals[~expected]
            if white.size == 0 or black.size == 0:
                continue
            if white.min() - black.max() >= _DECODE_MARGIN:
                return bi, hmat.astype(np.float64)
    return None


_EDGE_TS = np.arange(-2.5, 2.51, 0.5)


def _refine_edge_points(
    gray: np.ndarray, p: np.ndarray, normals: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Subpixel black/white edge crossings along ``normals`` through ``p``.

    Batched: returns (refined points, keep mask over input rows).  A row is
    kept when its probe segment stays in bounds, spans enough contrast, and
    has a zero crossing within 2 px of the predicted point.
    """
    ts = _EDGE_TS
    h, w = gray.shape
    pts = p[:, None, :] + ts[None, :, None] * normals[:, None, :]
    x, y = pts[:, :, 0], pts[:, :, 1]
    ok = (
        (x.min(axis=1) >= 1) & (x.max(axis=1) <= w - 2)
        & (y.min(axis=1) >= 1) & (y.max(axis=1) <= h - 2)
    )
    vals = _sample_bilinear(gray, pts.reshape(-1, 2)).reshape(len(p), len(ts))
    lo = vals.min(axis=1)
    hi = vals.max(axis=1)
    ok &= hi - lo >= _CONTRAST_MIN
    s = vals - 0.5 * (lo + hi)[:, None]
    s0, s1 = s[:, :-1], s[:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        cross = ts[:-1][None, :] + 0.5 * s0 / (s0 - s1)
    cand = np.where(
        s0 * s1 < 0, cross, np.where(s0 == 0.0, ts[:-1][None, :], np.inf)
    )
    pick = np.argmin(np.abs(cand), axis=1)
    best = cand[np.arange(len(p)), pick]
    ok &= np.isfinite(best) & (np.abs(best) <= 2.0)
    return p + best[:, None] * normals, ok


def _block_edge_constraints(
    gray: np.ndarray, hmat: np.ndarray, blk: PatternBlock
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(image point, marker-plane line) pairs along the block boundary.

    The four outer sides of the block are long white-to-black edges; each
    refined sample constrains the plane homography by one point-on-line
    equation without the blur bias corner refinement suffers from.
    """
    n = _GRID_N
    corners = [blk.corner_mm(0, 0), blk.corner_mm(n, 0), blk.corner_mm(n, n), blk.corner_mm(0, n)]
    mids, offs, lines = [], [], []
    for s in range(4):
        c0 = np.array(corners[s], dtype=float)
        c1 = np.array(corners[(s + 1) % 4], dtype=float)
        line = np.cross([c0[0], c0[1], 1.0], [c1[0], c1[1], 1.0])
        for u in np.linspace(0.1, 0.9, 8):
            m = c0 + (c1 - c0) * u
            mids.append(m)
            offs.append(m + (c1 - c0) * 1e-3)
            lines.append(line)
    pq = cv2.perspectiveTransform(np.array([mids + offs]), hmat)[0]
    m = len(mids)
    p, p2 = pq[:m], pq[m:]
    tangent = p2 - p
    norm = np.hypot(tangent[:, 0], tangent[:, 1])
    keep = norm >= 1e-12
    normals = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    normals[keep] /= norm[keep, None]
    refined, ok = _refine_edge_points(gray, p, normals)
    ok &= keep
    return [(refined[i], lines[i]) for i in np.nonzero(ok)[0]]


def _fit_plane_homography(
    pt_img: np.ndarray,
    pt_mm: np.ndarray,
    edge_img: np.ndarray,
    edge_lines: np.ndarray,
) -> np.ndarray | None:
    """Homography mm -> image px from point and point-on-line measurements.

    Fits the inverse map G (image -> marker plane): point correspondences give
    two linear equations each, an image point known to lie on a marker-plane
    line gives one.  Both coordinate sets are Hartley-normalized.
    """
    n_pts = len(pt_img)
    n_edge = len(edge_img)
    if 2 * n_pts + n_edge < 12 or n_pts < 2:
        return None

    def norm_transform(pts):
        mean = pts.mean(axis=0)
        scale = math.sqrt(2.0) / max(np.linalg.norm(pts - mean, axis=1).mean(), 1e-12)
        return np.array(
            [[scale, 0, -scale * mean[0]], [0, scale, -scale * mean[1]], [0, 0, 1]]
        )

    t_img = norm_transform(np.vstack([pt_img, edge_img]) if n_edge else pt_img)
    t_mm = norm_transform(pt_mm)
    ih = np.hstack([pt_img, np.ones((n_pts, 1))]) @ t_img.T
    mh = np.hstack([pt_mm, np.ones((n_pts, 1))]) @ t_mm.T
    rows = []
    for p, m in zip(ih, mh):
        rows.append(np.concatenate([p, np.zeros(3), -m[0] * p]))
        rows.append(np.concatenate([np.zeros(3), p, -m[1] * p]))
    if n_edge:
        eh = np.hstack([edge_img, np.ones((n_edge, 1))]) @ t_img.T
        lines = edge_lines @ np.linalg.inv(t_mm)  # l' = T^{-T} l  (row form)
        for p, l in zip(eh, lines):
            rows.append(np.concatenate([l[0] * p, l[1] * p, l[2] * p]))
    a = np.array(rows)
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-10:
        return None
    g = vt[-1].reshape(3, 3)
    g = np.linalg.inv(t_mm) @ g @ t_img
    if abs(np.linalg.det(g)) < 1e-15:
        return None
    h = np.linalg.inv(g)
    return h / h[2, 2]


def _feature_contrast_mask(
    gray: np.ndarray, hmat: np.ndarray, blk: PatternBlock, ij: np.ndarray
) -> np.ndarray:
    """Per-junction contrast test over the four diagonal neighbor cells.

    ``ij`` is (f, 2) junction grid coordinates; batched so one transform and
    one bilinear gather cover every feature of the block.
    """
    offs = np.array([(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)])
    pts_mm = np.empty((len(ij), 4, 2))
    pts_mm[:, :, 0] = blk.origin[0] + (ij[:, 0, None] + offs[None, :, 0]) * blk.cell_mm
    pts_mm[:, :, 1] = blk.origin[1] + (ij[:, 1, None] + offs[None, :, 1]) * blk.cell_mm
    pts = cv2.perspectiveTransform(pts_mm.reshape(1, -1, 2), hmat)[0].reshape(len(ij), 4, 2)
    h, w = gray.shape
    inside = (
        (pts[:, :, 0] >= 1) & (pts[:, :, 0] < w - 1)
        & (pts[:, :, 1] >= 1) & (pts[:, :, 1] < h - 1)
    )
    vals = _sample_bilinear(gray, pts.reshape(-1, 2)).reshape(len(ij), 4)
    hi = np.where(inside, vals, -np.inf).max(axis=1)
    lo = np.where(inside, vals, np.inf).min(axis=1)
    return (inside.sum(axis=1) >= 2) & (hi - lo >= _CONTRAST_MIN)


def detect_features(
    frame: np.ndarray, spec: MarkerSpec, k: CameraIntrinsics
) -> list[Correspondence]:
    """Detect visible marker features; an empty list is a valid result."""
    gray = _to_gray(np.ascontiguousarray(frame))
    if gray.shape != (k.height, k.width):
        raise ValueError("frame resolution must match intrinsics")
    binary = _binarize(gray)
    quads = _candidate_quads(binary)
    # largest first: pattern blocks dominate the frame, so the loop can stop
    # as soon as every block has been decoded
    def _quad_area(q: np.ndarray) -> float:
        d1, d2 = q[2] - q[0], q[3] - q[1]
        return abs(float(d1[0] * d2[1] - d1[1] * d2[0]))

    quads.sort(key=_quad_area, reverse=True)
    found: dict[int, tuple[int, np.ndarray]] = {}
    for quad in quads:
        if not _quick_match(gray, quad, spec):
            continue
        decoded = _decode_block(gray, quad, spec)
        if decoded is not None and decoded[0] not in found:
            found[decoded[0]] = decoded
            if len(found) == len(spec.blocks):
                break
    per_block = []
    saddle_mm: list[tuple[float, float]] = []
    saddle_px: list[np.ndarray] = []
    edges: list[tuple[np.ndarray, np.ndarray]] = []
    for bi, (_, hmat) in found.items():
        blk = spec.blocks[bi]
        feats = [(fid, mm) for fid, mm in spec.features() if fid // 100 == bi]
        pts_mm = np.array([mm for _, mm in feats])
        predicted = cv2.perspectiveTransform(pts_mm[None], hmat)[0]
        refined = cv2.cornerSubPix(
            gray,
            predicted.astype(np.float32).reshape(-1, 1, 2),
            winSize=(2, 2),
            zeroZone=(-1, -1),
            criteria=(cv2.TERM_CRITERIA_EPS + cv2.TERM_CRITERIA_MAX_ITER, 40, 0.005),
        ).reshape(-1, 2)
        ij = np.array([_junction_of(fid) for fid, _ in feats])
        contrast_ok = _feature_contrast_mask(gray, hmat, blk, ij)
        visible = []
        for idx, ((fid, mm), pred, ref) in enumerate(zip(feats, predicted, refined)):
            if np.linalg.norm(ref - pred) > _REFINE_MAX_SHIFT:
                continue
            if not contrast_ok[idx]:
                continue
            i, j = ij[idx]
            visible.append(idx)
            if _is_saddle(blk, i, j):
                saddle_mm.append(mm)
                saddle_px.append(ref)
        edges.extend(_block_edge_constraints(gray, hmat, blk))
        per_block.append((feats, pts_mm, refined, visible))
    # saddle junctions refine without bias; corner-type junctions (three
    # same-colored neighbors) drift under blur.  Both blocks share the marker
    # plane, so fit one homography to the saddles plus the block-boundary
    # edge samples and re-predict every feature from it.
    href = None
    if saddle_mm:
        href = _fit_plane_homography(
            np.array(saddle_px, dtype=float),
            np.array(saddle_mm, dtype=float),
            np.array([p for p, _ in edges], dtype=float).reshape(-1, 2),
            np.array([l for _, l in edges], dtype=float).reshape(-1, 3),
        )
    corrs: list[Correspondence] = []
    for feats, pts_mm, refined, visible in per_block:
        emitted = refined
        if href is not None:
            emitted = cv2.perspectiveTransform(pts_mm[None], href)[0]
        for idx in visible:
            fid, mm = feats[idx]
            u, v = emitted[idx]
            # array-index coords -> continuous image coords (pixel centers at +0.5)
            corrs.append(Correspondence(fid, (float(u) + 0.5, float(v) + 0.5), mm))
    return corrs


def _is_saddle(blk: PatternBlock, i: int, j: int) -> bool:
    """True if the four cells meeting at junction (i, j) alternate diagonally."""
    c00 = blk.cell_color(i - 1, j - 1)
    c10 = blk.cell_color(i, j - 1)
    c01 = blk.cell_color(i - 1, j)
    c11 = blk.cell_color(i, j)
    if None in (c00, c10, c01, c11):
        return False
    return c00 == c11 and c01 == c10 and c00 != c01


def _junction_of(fid: int) -> tuple[int, int]:
    k = fid % 100
    n = _GRID_N
    if k == 0:
        return 0, 0
    if k == 1:
        return n, 0
    if k == 2:
        return n, n
    if k == 3:
        return 0, n
    k -= 4
    return 1 + k // (n - 1), 1 + k % (n - 1)


# --- pose estimation ---------------------------------------------------------


def _normalized_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Homography src (mm) -> dst (px) via normalized DLT."""

    def norm_transform(pts):
        c = pts.mean(axis=0)
        d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
        s = math.sqrt(2) / d if d > 0 else 1.0
        t = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])
        return t

    ts, td = norm_transform(src), norm_transform(dst)
    sh = (ts @ np.column_stack([src, np.ones(len(src))]).T).T
    dh = (td @ np.column_stack([dst, np.ones(len(dst))]).T).T
    a = []
    for (x, y, _), (u, v, _) in zip(sh, dh):
        a.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        a.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, s, vt = np.linalg.svd(np.array(a))
    if s[-2] < 1e-12:
        raise DegenerateError("degenerate correspondence configuration")
    h = vt[-1].reshape(3, 3)
    return np.linalg.inv(td) @ h @ ts


def _pose_from_homography(hmat: np.ndarray, k: CameraIntrinsics) -> Pose6DoF:
    b = np.linalg.inv(k.matrix()) @ hmat
    n1, n2 = np.linalg.norm(b[:, 0]), np.linalg.norm(b[:, 1])
    if n1 < 1e-12 or n2 < 1e-12:
        raise DegenerateError("homography decomposition failed")
    lam = 2.0 / (n1 + n2)
    b = b * lam
    if b[2, 2] < 0:  # marker must be in front of the camera
        b = -b
    r1, r2, t = b[:, 0], b[:, 1], b[:, 2]
    r = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return Pose6DoF(r, t)


def _axis_angle_to_matrix(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    if theta < 1e-16:
        return np.eye(3)
    from .geometry import rotation_about_axis

    return rotation_about_axis(w, theta)


def _residuals_rt(
    r: np.ndarray, t: np.ndarray, world: np.ndarray, uv: np.ndarray, k: CameraIntrinsics
):
    pc = world @ r.T + t
    z = pc[:, 2]
    if np.any(z <= 0):
        return None
    proj = np.stack([k.fx * pc[:, 0] / z + k.cx, k.fy * pc[:, 1] / z + k.cy], axis=1)
    return (proj - uv).ravel()


def _reproject_residuals(pose: Pose6DoF, pts_mm: np.ndarray, uv: np.ndarray, k: CameraIntrinsics):
    world = np.column_stack([pts_mm, np.zeros(len(pts_mm))])
    pc = pose.apply(world)
    z = pc[:, 2]
    if np.any(z <= 0):
        return None
    proj = np.stack([k.fx * pc[:, 0] / z + k.cx, k.fy * pc[:, 1] / z + k.cy], axis=1)
    return (proj - uv).ravel()


def estimate_pose(
    corrs: list[Correspondence],
    k: CameraIntrinsics,
    rms_trace: list[float] | None = None,
) -> tuple[Pose6DoF, float]:
    """World(marker) -> camera pose plus final RMS reprojection residual (px).

    DLT homography initialization, then damped iterative least squares; the
    RMS is non-increasing across iterations by construction (steps that do not
    reduce it are rejected with increased damping).
    """
    if len(corrs) < 4:
        raise DegenerateError(f"need >= 4 correspondences, got {len(corrs)}")
    pts_mm = np.array([c.marker_point for c in corrs], dtype=float)
    uv = np.array([c.image_point for c in corrs], dtype=float)
    spread = pts_mm - pts_mm.mean(axis=0)
    if np.linalg.svd(spread, compute_uv=False)[-1] < 1e-9:
        raise DegenerateError("marker points are collinear")

    hmat = _normalized_dlt(pts_mm, uv)
    pose = _pose_from_homography(hmat, k)

    world = np.column_stack([pts_mm, np.zeros(len(pts_mm))])
    res = _residuals_rt(pose.rotation, pose.translation, world, uv, k)
    if res is None:
        raise DegenerateError("initial pose places points behind the camera")
    rms = math.sqrt(float(res @ res) / len(corrs))
    if rms_trace is not None:
        rms_trace.append(rms)
    lam = 1e-3
    for _ in range(100):
        jac = np.zeros((len(res), 6))
        eps = 1e-6
        for p in range(6):
            dw = np.zeros(3)
            dt = np.zeros(3)
            if p < 3:
                dw[p] = eps
            else:
                dt[p - 3] = eps
            r2 = _residuals_rt(
                _axis_angle_to_matrix(dw) @ pose.rotation,
                pose.translation + dt,
                world,
                uv,
                k,
            )
            if r2 is None:
                r2 = res  # zero column; this direction is unusable
            jac[:, p] = (r2 - res) / eps
        jtj = jac.T @ jac
        jtr = jac.T @ res
        improved = False
        for _try in range(12):
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj) + 1e-12), -jtr)
            except np.linalg.LinAlgError:
                break
            trial = Pose6DoF(
                nearest_rotation(_axis_angle_to_matrix(delta[:3]) @ pose.rotation),
                pose.translation + delta[3:],
            )
            r2 = _residuals_rt(trial.rotation, trial.translation, world, uv, k)
            if r2 is not None:
                rms2 = math.sqrt(float(r2 @ r2) / len(corrs))
                if rms2 < rms:
                    converged = rms - rms2 < 1e-10
                    pose, res, rms = trial, r2, rms2
                    if rms_trace is not None:
                        rms_trace.append(rms)
                    if converged:
                        improved = False
                    else:
                        lam = max(lam / 10, 1e-12)
                        improved = True
                    break
            lam *= 10
        if not improved:
            break
    if rms > 10.0:
        raise DivergenceError(f"refinement stalled at RMS {rms:.2f} px")
    return pose, rms


def update_tracking(
    state: TrackingState, detection: list[Correspondence], k: CameraIntrinsics
) -> TrackingState:
    """Tracking/Lost transition with frozen pose while Lost."""
    frac = len(detection) / state.total_features if state.total_features else 0.0
    if frac >= Q_MIN:
        try:
            extr, _rms = estimate_pose(detection, k)
        except (DegenerateError, DivergenceError):
            return replace(state, mode=TrackingMode.LOST, quality=frac)
        return TrackingState(TrackingMode.TRACKING, pose_invert(extr), frac, state.total_features)
    return replace(state, mode=TrackingMode.LOST, quality=frac)


def synthesize_correspondences(
    spec: MarkerSpec,
    extrinsics: Pose6DoF,
    k: CameraIntrinsics,
    noise_px: float = 0.0,
    rng: np.random.Generator | None = None,
    blocks: tuple[int, ...] = (0, 1),
) -> list[Correspondence]:
    """Ground-truth correspondence injection (isolates pose math from detection).

    Projects spec features through a known pose, optionally adds Gaussian
    pixel jitter, and drops features outside the image or behind the camera.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    out = []
    for fid, mm in spec.features():
        if fid // 100 not in blocks:
            continue
        pc = extrinsics.apply(np.array([mm[0], mm[1], 0.0]))
        if pc[2] <= k.near_mm:
            continue
        u = k.fx * pc[0] / pc[2] + k.cx
        v = k.fy * pc[1] / pc[2] + k.cy
        if noise_px > 0:
            u += rng.normal(0, noise_px)
            v += rng.normal(0, noise_px)
        if 0 <= u < k.width and 0 <= v < k.height:
            out.append(Correspondence(fid, (float(u), float(v)), mm))
    return out
