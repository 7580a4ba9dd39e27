"""Quantitative evaluation: registration error statistics, marker-size sweeps,
mask IoU, and frame-time profiles.

Registration is scored against simulator ground truth as exact 3D/image-space
point errors (an analog of measuring edge offsets on video by eye).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SampleError, SizeError
from .geometry import CameraIntrinsics, DEFAULT_INTRINSICS, Pose6DoF, rotation_about_axis
from .marker import MarkerSpec, PatternBlock, default_marker_spec, estimate_pose, synthesize_correspondences
from .model import AssemblyModel

__all__ = [
    "RegistrationReport",
    "IoUResult",
    "registration_error",
    "iou",
    "sample_model_points",
    "random_camera_pose",
    "scaled_marker_spec",
    "registration_trials",
    "marker_size_sweep",
    "fps_profile",
]


@dataclass(frozen=True)
class RegistrationReport:
    """Per-point registration errors of an estimated pose against truth."""

    points: np.ndarray          # (n, 3) model-frame sample points
    distances_mm: np.ndarray    # (n,) distance of anchored point to marker origin
    errors_mm: np.ndarray       # (n,) 3D error per point
    mean_mm: float
    max_mm: float
    image_mean_px: float
    correlation: float          # Pearson of (distance, error); 0 when degenerate
    degenerate_correlation: bool


@dataclass(frozen=True)
class IoUResult:
    intersection_px: int
    union_px: int
    iou: float
    degenerate: bool  # both masks empty


def registration_error(
    estimated: Pose6DoF,
    truth: Pose6DoF,
    sample_points: np.ndarray,
    marker_anchor: Pose6DoF,
    k: CameraIntrinsics = DEFAULT_INTRINSICS,
) -> RegistrationReport:
    """Score an estimated camera extrinsics against the true one.

    Both poses map marker world to the camera frame.  Each model-frame sample
    point is anchored into marker world, pushed through both poses, and the
    3D offset plus the pixel distance of the two projections are recorded.
    """
    pts = np.asarray(sample_points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise SampleError("at least one sample point required")
    world = marker_anchor.apply(pts)
    dist = np.linalg.norm(world, axis=1)
    cam_est = estimated.apply(world)
    cam_tru = truth.apply(world)
    err = np.linalg.norm(cam_est - cam_tru, axis=1)

    def _uv(cam):
        z = cam[:, 2]
        ok = z > k.near_mm
        uv = np.full((len(cam), 2), np.nan)
        uv[ok, 0] = k.fx * cam[ok, 0] / z[ok] + k.cx
        uv[ok, 1] = k.fy * cam[ok, 1] / z[ok] + k.cy
        return uv, ok

    uv_e, ok_e = _uv(cam_est)
    uv_t, ok_t = _uv(cam_tru)
    both = ok_e & ok_t
    img_err = np.linalg.norm(uv_e[both] - uv_t[both], axis=1)
    image_mean = float(img_err.mean()) if img_err.size else 0.0

    degenerate = len(pts) < 3 or float(np.std(dist)) == 0.0 or float(np.std(err)) == 0.0
    corr = 0.0
    if not degenerate:
        corr = float(np.corrcoef(dist, err)[0, 1])
        if math.isnan(corr):
            corr, degenerate = 0.0, True
    return RegistrationReport(
        points=pts,
        distances_mm=dist,
        errors_mm=err,
        mean_mm=float(err.mean()),
        max_mm=float(err.max()),
        image_mean_px=image_mean,
        correlation=corr,
        degenerate_correlation=degenerate,
    )


def iou(mask_a: np.ndarray, mask_b: np.ndarray) -> IoUResult:
    """Pixel-count intersection over union of two boolean masks."""
    a = np.asarray(mask_a, dtype=bool)
    b = np.asarray(mask_b, dtype=bool)
    if a.shape != b.shape:
        raise SizeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return IoUResult(0, 0, 1.0, True)
    return IoUResult(inter, union, inter / union, False)


def sample_model_points(model: AssemblyModel, max_points: int = 2000) -> np.ndarray:
    """Model-frame sample points: brick vertices, stratified by step.

    Every brick keeps at least one vertex; within a brick the subsample is an
    even stride over its vertex list, so the result is deterministic.
    """
    groups = []
    for brick in model.bricks:
        groups.append(brick.placement.apply(brick.part.mesh.vertices))
    total = sum(len(g) for g in groups)
    if total <= max_points:
        return np.vstack(groups)
    out = []
    quota = max(1, max_points // len(groups))
    for g in groups:
        take = min(len(g), quota)
        idx = np.linspace(0, len(g) - 1, take).round().astype(int)
        out.append(g[np.unique(idx)])
    return np.vstack(out)


def random_camera_pose(
    rng: np.random.Generator,
    distance_band_mm: tuple[float, float] = (250.0, 600.0),
) -> Pose6DoF:
    """World->camera extrinsics looking at the marker from a random viewpoint."""
    from .sim import look_at_marker

    dist = float(rng.uniform(*distance_band_mm))
    azim = float(rng.uniform(0.0, 2 * math.pi))
    elev = float(rng.uniform(math.radians(35), math.radians(80)))
    pos = np.array(
        [
            dist * math.cos(elev) * math.cos(azim),
            dist * math.cos(elev) * math.sin(azim),
            dist * math.sin(elev),
        ]
    )
    target = rng.uniform(-20.0, 20.0, size=2)
    extr = look_at_marker(pos, target=(target[0], target[1], 0.0), up_hint=(0, 0, 1))
    roll = float(rng.uniform(-math.pi, math.pi))
    spin = Pose6DoF(rotation_about_axis([0.0, 0.0, 1.0], roll), np.zeros(3))
    return Pose6DoF(spin.rotation @ extr.rotation, spin.rotation @ extr.translation)


def scaled_marker_spec(size_mm: float) -> MarkerSpec:
    """Default marker uniformly rescaled so its width equals ``size_mm``."""
    base = default_marker_spec()
    s = size_mm / base.width_mm
    blocks = tuple(
        PatternBlock((b.origin[0] * s, b.origin[1] * s), b.bits, b.cell_mm * s)
        for b in base.blocks
    )
    return MarkerSpec(base.width_mm * s, base.height_mm * s, blocks)


def registration_trials(
    model: AssemblyModel,
    trials: int = 100,
    noise_px: float = 0.3,
    seed: int = 0,
    marker: MarkerSpec | None = None,
    k: CameraIntrinsics = DEFAULT_INTRINSICS,
    distance_band_mm: tuple[float, float] = (250.0, 600.0),
    max_points: int = 2000,
) -> dict:
    """Randomized registration study: per-trial mean 3D error over the model."""
    if marker is None:
        marker = default_marker_spec()
    pts = sample_model_points(model, max_points)
    means, maxes, image_means = [], [], []
    for t in range(trials):
        truth = random_camera_pose(np.random.default_rng((seed, t, 0)), distance_band_mm)
        corrs = synthesize_correspondences(
            marker, truth, k, noise_px, np.random.default_rng((seed, t, 1))
        )
        est, _rms = estimate_pose(corrs, k)
        rep = registration_error(est, truth, pts, model.marker_anchor, k)
        means.append(rep.mean_mm)
        maxes.append(rep.max_mm)
        image_means.append(rep.image_mean_px)
    means_arr = np.array(means)
    return {
        "trials": trials,
        "noise_px": noise_px,
        "seed": seed,
        "sample_points": int(len(pts)),
        "trial_mean_mm": means,
        "trial_max_mm": maxes,
        "trial_image_mean_px": image_means,
        "mean_of_means_mm": float(means_arr.mean()),
        "median_mean_mm": float(np.median(means_arr)),
        "frac_mean_below_1mm": float((means_arr < 1.0).mean()),
    }


def marker_size_sweep(
    sizes_mm: list[float],
    noise_px: float,
    trials: int,
    seed: int = 0,
    k: CameraIntrinsics = DEFAULT_INTRINSICS,
    distance_band_mm: tuple[float, float] = (250.0, 600.0),
) -> list[tuple[float, float]]:
    """Median pose translation error per marker size, shared poses per trial.

    Camera poses and noise draws depend only on (seed, trial), so sweeps over
    sizes or noise levels are paired comparisons.
    """
    if trials < 30:
        raise SampleError("marker-size sweep requires at least 30 trials")
    errors: dict[float, list[float]] = {float(s): [] for s in sizes_mm}
    for t in range(trials):
        truth = random_camera_pose(np.random.default_rng((seed, t, 0)), distance_band_mm)
        for s in sizes_mm:
            spec = scaled_marker_spec(s)
            corrs = synthesize_correspondences(
                spec, truth, k, noise_px, np.random.default_rng((seed, t, 1))
            )
            est, _rms = estimate_pose(corrs, k)
            errors[float(s)].append(float(np.linalg.norm(est.translation - truth.translation)))
    return sorted((s, float(np.median(e))) for s, e in errors.items())


def occlusion_agreement(
    scenes: int = 50,
    seed: int = 0,
    k: CameraIntrinsics = DEFAULT_INTRINSICS,
) -> dict:
    """Rasterized guide visibility vs. the ray-cast oracle on random scenes.

    Each trial scatters bricks over the marker plane, builds a random prefix,
    picks a random target step, and compares the rasterizer's guide mask
    (marker plane + built bricks as occluders) against the independent
    ray-cast visibility oracle, pixel for pixel.
    """
    from .geometry import pose_compose
    from .model import Mesh
    from .render import visibility_mask
    from .scenes import make_scatter_model
    from .sim import SceneTruth, camera_extrinsics_at, visibility_oracle

    agreements = []
    for s in range(scenes):
        rng = np.random.default_rng((seed, s))
        model = make_scatter_model(int(rng.integers(4, 10)), rng)
        built = int(rng.integers(0, model.final_step))
        target = int(rng.integers(built + 1, model.final_step + 1))
        marker = default_marker_spec()
        extr = random_camera_pose(rng, (300.0, 550.0))
        truth = SceneTruth(
            n_frames=1,
            camera_keyframes=((0, extr),),
            model=model,
            marker=marker,
            built_breakpoints=((0, built),),
            intrinsics=k,
            seed=0,
        )
        oracle = visibility_oracle(truth, 0, target)
        hw, hh = marker.width_mm / 2, marker.height_mm / 2
        plane = Mesh(
            np.array(
                [[-hw, -hh, 0.0], [hw, -hh, 0.0], [hw, hh, 0.0], [-hw, hh, 0.0]]
            ),
            np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32),
        )
        occluders = [(plane, Pose6DoF.identity())]
        target_item = None
        for brick in model.bricks:
            transform = pose_compose(model.marker_anchor, brick.placement)
            if brick.step_index == target:
                target_item = (brick.part.mesh, transform)
            elif brick.step_index <= built:
                occluders.append((brick.part.mesh, transform))
        mask = visibility_mask(target_item, occluders, camera_extrinsics_at(truth, 0), k)
        agreements.append(float((mask == oracle).mean()))
    arr = np.array(agreements)
    return {
        "scenes": scenes,
        "seed": seed,
        "per_scene_agreement": agreements,
        "mean_agreement": float(arr.mean()),
        "min_agreement": float(arr.min()),
    }


def fps_profile(frame_times_ms: list[float]) -> dict:
    """Median/p95 frame time and effective FPS of a timed replay."""
    times = np.asarray(frame_times_ms, dtype=float)
    if len(times) < 100:
        raise SampleError(f"need >= 100 timed frames, got {len(times)}")
    median = float(np.median(times))
    return {
        "frames": int(len(times)),
        "median_ms": median,
        "p95_ms": float(np.percentile(times, 95)),
        "effective_fps": 1000.0 / median if median > 0 else float("inf"),
    }
