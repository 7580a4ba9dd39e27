"""Synthetic reality generator and ground-truth oracles.

Stands in for the physical world: renders camera-feed frames of the marker
plane, the physically-built bricks, and synthetic screen-space hand blobs
from a scripted ground truth.  Also hosts the ray-casting visibility oracle
used to check the rasterizer's occlusion behavior (deliberately a separate
code path: per-pixel ray/triangle intersection, no edge functions, no shared
traversal code with the rasterizer).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import RangeError
from .geometry import CameraIntrinsics, DEFAULT_INTRINSICS, Pose6DoF, pose_compose, pose_invert
from .hand import CbCrFrame, ColorSeed, add_seed, rgb_to_cbcr
from .instruction import (
    SessionState,
    advance_step,
    begin_session,
    frame_update,
    hand_pass,
    retreat_step,
)
from .marker import MarkerSpec, default_marker_spec, marker_plane_color
from .model import AssemblyModel, Mesh
from .imageio import write_ppm, write_depth

__all__ = [
    "HandBlob",
    "HandSpec",
    "SceneTruth",
    "render_reality_frame",
    "visibility_oracle",
    "hand_truth_mask",
    "run_replay",
    "camera_extrinsics_at",
    "look_at_marker",
    "truth_to_json",
    "truth_from_json",
]

BACKGROUND_GRAY = 120
MARKER_WHITE = 235
MARKER_BLACK = 25
_SUPERSAMPLE = 3  # marker-plane antialiasing grid (per axis)


@dataclass(frozen=True)
class HandBlob:
    """Screen-space ellipse with linearly interpolated center keyframes."""

    path: tuple[tuple[int, float, float], ...]  # (frame, u, v)
    ru: float
    rv: float

    def center_at(self, t: int) -> tuple[float, float]:
        ks = self.path
        if t <= ks[0][0]:
            return ks[0][1], ks[0][2]
        for (f0, u0, v0), (f1, u1, v1) in zip(ks, ks[1:]):
            if t <= f1:
                a = (t - f0) / (f1 - f0) if f1 > f0 else 0.0
                return u0 + a * (u1 - u0), v0 + a * (v1 - v0)
        return ks[-1][1], ks[-1][2]


@dataclass(frozen=True)
class HandSpec:
    blobs: tuple[HandBlob, ...]
    cb_mean: float = 110.0
    cr_mean: float = 155.0
    sigma: float = 5.0
    luma: float = 150.0


@dataclass(frozen=True)
class SceneTruth:
    """Scripted ground truth for a synthetic session."""

    n_frames: int
    camera_keyframes: tuple[tuple[int, Pose6DoF], ...]  # (frame, world->camera)
    model: AssemblyModel
    marker: MarkerSpec = field(default_factory=default_marker_spec)
    built_breakpoints: tuple[tuple[int, int], ...] = ((0, 0),)
    hand: HandSpec | None = None
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    pixel_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("need at least one frame")
        counts = [c for _, c in self.built_breakpoints]
        if counts != sorted(counts):
            raise ValueError("built_through must be non-decreasing")

    def built_through(self, t: int) -> int:
        self._check(t)
        built = 0
        for f, c in self.built_breakpoints:
            if f <= t:
                built = c
        return built

    def _check(self, t: int):
        if not (0 <= t < self.n_frames):
            raise RangeError(f"frame {t} outside [0, {self.n_frames})")


def camera_extrinsics_at(truth: SceneTruth, t: int) -> Pose6DoF:
    """True world->camera pose at frame t (slerp + linear camera center)."""
    truth._check(t)
    ks = truth.camera_keyframes
    if t <= ks[0][0] or len(ks) == 1:
        return ks[0][1]
    for (f0, p0), (f1, p1) in zip(ks, ks[1:]):
        if t <= f1:
            if f1 == f0:
                return p1
            a = (t - f0) / (f1 - f0)
            rots = Rotation.from_matrix([p0.rotation, p1.rotation])
            r = Slerp([0.0, 1.0], rots)(a).as_matrix()
            c0 = pose_invert(p0).translation
            c1 = pose_invert(p1).translation
            c = c0 + a * (c1 - c0)
            from .geometry import nearest_rotation

            r = nearest_rotation(r)
            return Pose6DoF(r, -(r @ c))
    return ks[-1][1]


def look_at_marker(camera_pos_world, up_hint=(0.0, 1.0, 0.0), target=(0.0, 0.0, 0.0)) -> Pose6DoF:
    """Extrinsics for a camera at a world position looking at a target point."""
    c = np.asarray(camera_pos_world, dtype=float)
    fwd = np.asarray(target, dtype=float) - c
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up_hint, dtype=float)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        up = np.array([0.0, 1.0, 0.1])
        right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])  # rows: camera axes in world coords
    from .geometry import nearest_rotation

    r = nearest_rotation(r)
    return Pose6DoF(r, -(r @ c))


# --- reality rendering -------------------------------------------------------


def _marker_plane_layer(truth: SceneTruth, extr: Pose6DoF, k: CameraIntrinsics):
    """(gray HxW float, depth HxW float) of the marker plane, supersampled."""
    h, w = k.height, k.width
    rt = extr.rotation.T
    t = extr.translation
    rt_t = rt @ t
    sub = (np.arange(_SUPERSAMPLE) + 0.5) / _SUPERSAMPLE
    us = (np.arange(w)[None, :, None, None] + sub[None, None, :, None])
    vs = (np.arange(h)[:, None, None, None] + sub[None, None, None, :])
    dirx = (us - k.cx) / k.fx
    diry = (vs - k.cy) / k.fy
    # world-frame ray direction per subsample; solve for plane z = 0
    dz_w = rt[2, 0] * dirx + rt[2, 1] * diry + rt[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = rt_t[2] / dz_w
    px_w = rt[0, 0] * dirx * depth + rt[0, 1] * diry * depth + rt[0, 2] * depth - rt_t[0]
    py_w = rt[1, 0] * dirx * depth + rt[1, 1] * diry * depth + rt[1, 2] * depth - rt_t[1]
    hw, hh = truth.marker.width_mm / 2, truth.marker.height_mm / 2
    visible = depth > k.near_mm
    inside = visible & (np.abs(px_w) <= hw) & (np.abs(py_w) <= hh)

    albedo = np.full(px_w.shape, float(BACKGROUND_GRAY))
    if inside.any():
        vals = np.zeros(int(inside.sum()))
        xs = px_w[inside]
        ys = py_w[inside]
        shade = np.zeros_like(xs)
        # block cells first, black fill default
        for blk in truth.marker.blocks:
            bx = (xs - blk.origin[0]) / blk.cell_mm
            by = (ys - blk.origin[1]) / blk.cell_mm
            i = np.floor(bx).astype(int)
            j = np.floor(by).astype(int)
            in_blk = (i >= 0) & (i < blk.bits.shape[0]) & (j >= 0) & (j < blk.bits.shape[1])
            white = np.zeros_like(in_blk)
            white[in_blk] = blk.bits[i[in_blk], j[in_blk]]
            shade = np.where(white, 1.0, shade)
        vals = MARKER_BLACK + shade * (MARKER_WHITE - MARKER_BLACK)
        albedo[inside] = vals
    gray = albedo.mean(axis=(2, 3))
    center_depth = np.where(
        visible[:, :, _SUPERSAMPLE // 2, _SUPERSAMPLE // 2],
        depth[:, :, _SUPERSAMPLE // 2, _SUPERSAMPLE // 2],
        np.inf,
    )
    return gray, center_depth


def _brick_layer(truth: SceneTruth, t: int, extr: Pose6DoF, k: CameraIntrinsics):
    """Rasterize physically built bricks with their natural colors."""
    from .render import Material, rasterize

    built = truth.built_through(t)
    items = []
    for brick in truth.model.bricks[:built]:
        transform = pose_compose(truth.model.marker_anchor, brick.placement)
        items.append(
            (brick.part.mesh, transform, Material.guide_shaded(brick.part.color_rgb))
        )
    return rasterize(items, extr, k)


def render_reality_frame(truth: SceneTruth, t: int) -> tuple[np.ndarray, CbCrFrame]:
    """Deterministic synthetic camera feed (RGB8) plus its chrominance raster."""
    truth._check(t)
    k = truth.intrinsics
    extr = camera_extrinsics_at(truth, t)

    plane_gray, plane_depth = _marker_plane_layer(truth, extr, k)
    color = np.repeat(
        np.round(plane_gray).astype(np.uint8)[:, :, None], 3, axis=2
    )

    bricks = _brick_layer(truth, t, extr, k)
    brick_px = bricks.guide_mask & (bricks.depth < plane_depth)
    color[brick_px] = bricks.color[brick_px]

    if truth.hand is not None:
        mask = hand_truth_mask(truth, t)
        if mask.any():
            rng = np.random.default_rng((truth.seed, 7919, t))
            n = int(mask.sum())
            cb = np.clip(rng.normal(truth.hand.cb_mean, truth.hand.sigma, n), 0, 255)
            cr = np.clip(rng.normal(truth.hand.cr_mean, truth.hand.sigma, n), 0, 255)
            y = np.full(n, truth.hand.luma)
            r = y + 1.402 * (cr - 128.0)
            g = y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0)
            b = y + 1.772 * (cb - 128.0)
            color[mask] = np.clip(
                np.round(np.stack([r, g, b], axis=1)), 0, 255
            ).astype(np.uint8)

    if truth.pixel_noise_sigma > 0:
        rng = np.random.default_rng((truth.seed, 104729, t))
        noise = rng.normal(0, truth.pixel_noise_sigma, color.shape)
        color = np.clip(color.astype(np.float64) + noise, 0, 255).astype(np.uint8)

    cbcr = CbCrFrame(rgb_to_cbcr(color, downsample=2), k.width, k.height)
    return color, cbcr


def hand_truth_mask(truth: SceneTruth, t: int) -> np.ndarray:
    """Exact pixel mask of the synthetic hand blobs (pipeline-independent)."""
    truth._check(t)
    k = truth.intrinsics
    mask = np.zeros((k.height, k.width), dtype=bool)
    if truth.hand is None:
        return mask
    yy, xx = np.mgrid[0 : k.height, 0 : k.width]
    for blob in truth.hand.blobs:
        cu, cv = blob.center_at(t)
        mask |= ((xx + 0.5 - cu) / blob.ru) ** 2 + ((yy + 0.5 - cv) / blob.rv) ** 2 <= 1.0
    return mask


# --- truth file I/O ----------------------------------------------------------


def truth_to_json(truth: SceneTruth) -> str:
    """Canonical JSON for a scene-truth file (see docs/scene-truth.md)."""
    from .model import serialize_model

    doc = {
        "format": "brickxar-scene-truth/1",
        "n_frames": truth.n_frames,
        "camera_keyframes": [
            {
                "frame": f,
                "rotation": [float(x) for x in p.rotation.reshape(-1)],
                "translation": [float(x) for x in p.translation],
            }
            for f, p in truth.camera_keyframes
        ],
        "model": json.loads(serialize_model(truth.model).decode("utf-8")),
        "marker": json.loads(truth.marker.to_json()),
        "built_breakpoints": [list(bp) for bp in truth.built_breakpoints],
        "hand": None
        if truth.hand is None
        else {
            "blobs": [
                {"path": [list(kp) for kp in b.path], "ru": b.ru, "rv": b.rv}
                for b in truth.hand.blobs
            ],
            "cb_mean": truth.hand.cb_mean,
            "cr_mean": truth.hand.cr_mean,
            "sigma": truth.hand.sigma,
            "luma": truth.hand.luma,
        },
        "intrinsics": {
            "fx": truth.intrinsics.fx,
            "fy": truth.intrinsics.fy,
            "cx": truth.intrinsics.cx,
            "cy": truth.intrinsics.cy,
            "width": truth.intrinsics.width,
            "height": truth.intrinsics.height,
            "near_mm": truth.intrinsics.near_mm,
        },
        "pixel_noise_sigma": truth.pixel_noise_sigma,
        "seed": truth.seed,
    }
    return json.dumps(doc, sort_keys=True, indent=2)


def truth_from_json(text: str) -> SceneTruth:
    from .errors import FormatError
    from .model import load_model

    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"not a JSON truth document: {exc}") from exc
    if doc.get("format") != "brickxar-scene-truth/1":
        raise FormatError("unknown scene-truth format")
    keys = tuple(
        (
            int(kf["frame"]),
            Pose6DoF(
                np.array(kf["rotation"], dtype=float).reshape(3, 3),
                np.array(kf["translation"], dtype=float),
            ),
        )
        for kf in doc["camera_keyframes"]
    )
    hand = None
    if doc.get("hand") is not None:
        hd = doc["hand"]
        hand = HandSpec(
            blobs=tuple(
                HandBlob(
                    path=tuple((int(f), float(u), float(v)) for f, u, v in b["path"]),
                    ru=float(b["ru"]),
                    rv=float(b["rv"]),
                )
                for b in hd["blobs"]
            ),
            cb_mean=float(hd["cb_mean"]),
            cr_mean=float(hd["cr_mean"]),
            sigma=float(hd["sigma"]),
            luma=float(hd["luma"]),
        )
    kd = doc["intrinsics"]
    return SceneTruth(
        n_frames=int(doc["n_frames"]),
        camera_keyframes=keys,
        model=load_model(json.dumps(doc["model"]).encode("utf-8")),
        marker=MarkerSpec.from_json(json.dumps(doc["marker"])),
        built_breakpoints=tuple((int(f), int(c)) for f, c in doc["built_breakpoints"]),
        hand=hand,
        intrinsics=CameraIntrinsics(
            fx=float(kd["fx"]),
            fy=float(kd["fy"]),
            cx=float(kd["cx"]),
            cy=float(kd["cy"]),
            width=int(kd["width"]),
            height=int(kd["height"]),
            near_mm=float(kd["near_mm"]),
        ),
        pixel_noise_sigma=float(doc["pixel_noise_sigma"]),
        seed=int(doc["seed"]),
    )


# --- ray-cast visibility oracle ---------------------------------------------


def _raycast_scene(tri_list, k: CameraIntrinsics, extr: Pose6DoF):
    """Nearest-hit depth and owner id per pixel via Moller-Trumbore.

    tri_list: iterable of (owner_id, (3,3) world-frame triangle).  Owners are
    processed in order; strictly-nearer hits win, so exact depth ties go to
    the earliest owner (lowest step index first by convention).
    """
    h, w = k.height, k.width
    depth = np.full((h, w), np.inf)
    owner = np.full((h, w), -1, dtype=np.int32)
    for oid, tri_w in tri_list:
        tri_c = extr.apply(tri_w)
        if np.any(tri_c[:, 2] <= k.near_mm * 0.5):
            continue  # oracle scenes keep geometry well in front
        us = k.fx * tri_c[:, 0] / tri_c[:, 2] + k.cx
        vs = k.fy * tri_c[:, 1] / tri_c[:, 2] + k.cy
        x0 = max(int(math.floor(us.min())), 0)
        x1 = min(int(math.ceil(us.max())) + 1, w)
        y0 = max(int(math.floor(vs.min())), 0)
        y1 = min(int(math.ceil(vs.max())) + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        xs = np.arange(x0, x1) + 0.5
        ys = np.arange(y0, y1) + 0.5
        dirx = (xs[None, :] - k.cx) / k.fx
        diry = (ys[:, None] - k.cy) / k.fy
        d = np.stack(
            [
                np.broadcast_to(dirx, (y1 - y0, x1 - x0)),
                np.broadcast_to(diry, (y1 - y0, x1 - x0)),
                np.ones((y1 - y0, x1 - x0)),
            ],
            axis=2,
        )
        v0, v1, v2 = tri_c
        e1 = v1 - v0
        e2 = v2 - v0
        pvec = np.cross(d, e2)
        det = pvec @ e1
        near_parallel = np.abs(det) < 1e-12
        qvec = np.cross(-v0, e1)  # tvec x e1 with ray origin O = 0
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_det = 1.0 / det
            uu = (pvec @ (-v0)) * inv_det
            vv = (d @ qvec) * inv_det
            tt = float(qvec @ e2) * inv_det
        hit = (
            ~near_parallel
            & (uu >= 0.0)
            & (vv >= 0.0)
            & (uu + vv <= 1.0)
            & (tt > k.near_mm)
        )
        sub_d = depth[y0:y1, x0:x1]
        sub_o = owner[y0:y1, x0:x1]
        better = hit & (tt < sub_d)
        sub_d[better] = tt[better]
        sub_o[better] = oid
    return depth, owner


def visibility_oracle(truth: SceneTruth, t: int, target_step: int) -> np.ndarray:
    """Pixels where the target brick is the nearest surface.

    Scene = marker plane rectangle + built bricks + the target brick; computed
    purely by ray casting (independent of the rasterizer code path).
    """
    truth._check(t)
    k = truth.intrinsics
    extr = camera_extrinsics_at(truth, t)
    built = truth.built_through(t)
    hw, hh = truth.marker.width_mm / 2, truth.marker.height_mm / 2
    plane = [
        np.array([[-hw, -hh, 0.0], [hw, -hh, 0.0], [hw, hh, 0.0]]),
        np.array([[-hw, -hh, 0.0], [hw, hh, 0.0], [-hw, hh, 0.0]]),
    ]
    tri_list: list[tuple[int, np.ndarray]] = []
    TARGET = 1_000_000

    def mesh_tris(mesh: Mesh, transform: Pose6DoF):
        verts = transform.apply(mesh.vertices)
        return verts[mesh.triangles]

    for brick in truth.model.bricks:
        include = brick.step_index <= built or brick.step_index == target_step
        if not include:
            continue
        oid = TARGET if brick.step_index == target_step else brick.step_index
        transform = pose_compose(truth.model.marker_anchor, brick.placement)
        for tri in mesh_tris(brick.part.mesh, transform):
            tri_list.append((oid, tri))
    for tri in plane:
        tri_list.append((0, tri))
    # lowest owner id first so depth ties resolve to the lowest step index
    tri_list.sort(key=lambda x: x[0])
    _, owner = _raycast_scene(tri_list, k, extr)
    return owner == TARGET


# --- replay ------------------------------------------------------------------


def run_replay(
    truth: SceneTruth,
    script: list[dict],
    out_dir: str | Path,
    write_frames: bool = True,
    write_depth_rasters: bool = False,
    profile: bool = False,
    hand_enabled: bool = False,
    grid_cell_px: int = 10,
    seed_tolerance: float = 12.0,
) -> dict:
    """Drive a full session over all frames of the truth, writing artifacts.

    Script events: ``{"t": frame, "ev": "advance" | "retreat" | "seed",
    "u": px, "v": px}`` (u/v only for seed).  Outputs per-frame PPM files and
    a JSON-lines metrics log; wall-clock timings go to a separate file only
    when ``profile`` is set, so the deterministic outputs stay byte-stable.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ev in script:
        if not (0 <= ev["t"] < truth.n_frames):
            raise RangeError(f"script event at frame {ev['t']} out of range")

    state = begin_session(
        truth.model, truth.marker, truth.intrinsics, hand_enabled=hand_enabled
    )
    seeds: list[ColorSeed] = []
    by_frame: dict[int, list[dict]] = {}
    for ev in script:
        by_frame.setdefault(ev["t"], []).append(ev)

    metrics_path = out / "metrics.jsonl"
    timings: list[dict] = []
    summary = {"frames": truth.n_frames, "final_step": None, "lost_frames": 0}
    with metrics_path.open("w") as mf:
        for t in range(truth.n_frames):
            feed, cbcr = render_reality_frame(truth, t)
            for ev in by_frame.get(t, ()):
                if ev["ev"] == "advance":
                    state = advance_step(state)
                elif ev["ev"] == "retreat":
                    state = retreat_step(state)
                elif ev["ev"] == "seed":
                    seeds = add_seed(
                        seeds, (ev["u"], ev["v"]), cbcr,
                        tol_cb=seed_tolerance, tol_cr=seed_tolerance,
                    )
            t0 = time.perf_counter()
            hexes = hand_pass(state, cbcr, seeds, cell_px=grid_cell_px)
            frame, state = frame_update(state, feed, hexes or None)
            dt_ms = (time.perf_counter() - t0) * 1000.0
            true_extr = camera_extrinsics_at(truth, t)
            est_extr = state.tracking.extrinsics
            pose_err = float(
                np.linalg.norm(est_extr.translation - true_extr.translation)
            )
            mode = state.tracking.mode.value
            if mode == "lost":
                summary["lost_frames"] += 1
            record = {
                "frame": t,
                "step": state.current_step if not state.complete else "complete",
                "mode": mode,
                "quality": round(state.tracking.quality, 6),
                "pose_err_mm": round(pose_err, 6),
            }
            mf.write(json.dumps(record, sort_keys=True) + "\n")
            if profile:
                timings.append({"frame": t, "ms": dt_ms})
            if write_frames:
                (out / f"frame_{t:05d}.ppm").write_bytes(write_ppm(frame.composed))
            if write_depth_rasters:
                (out / f"depth_{t:05d}.bin").write_bytes(write_depth(frame.depth))
    summary["final_step"] = state.current_step if not state.complete else "complete"
    if profile:
        (out / "timings.jsonl").write_text(
            "".join(json.dumps(r) + "\n" for r in timings)
        )
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    return {"state": state, "summary": summary, "timings": timings}
