"""Standard synthetic models, scenes, and corpora used by the CLI and tests."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import (
    CameraIntrinsics,
    DEFAULT_INTRINSICS,
    Pose6DoF,
    rotation_about_axis,
)
from .imageio import write_cbcr, write_pgm
from .marker import MarkerSpec, default_marker_spec
from .model import (
    AssemblyModel,
    BrickPart,
    PlacedBrick,
    StepMetadata,
    generate_brick_mesh,
)
from .sim import HandBlob, HandSpec, SceneTruth, hand_truth_mask, look_at_marker, render_reality_frame

__all__ = [
    "make_tower_model",
    "make_scatter_model",
    "make_plate_model",
    "make_orbit_truth",
    "make_static_truth",
    "make_hand_truth",
    "write_hand_corpus",
]

BRICK_HEIGHT_MM = 9.6
# tower sits over the small (sacrificial) marker block
TOWER_ANCHOR = Pose6DoF(np.eye(3), np.array([-80.0, -8.0, 0.0]))


def _colored(part: BrickPart, rgb) -> BrickPart:
    return BrickPart(part.part_id, tuple(rgb), part.mesh)


_PALETTE = [(201, 26, 9), (0, 85, 191), (242, 205, 55), (35, 120, 65), (155, 161, 157)]


def make_tower_model(n_bricks: int, metadata_step: int | None = None) -> AssemblyModel:
    """A straight stack of 2x2 bricks over the sacrificial marker block."""
    base = generate_brick_mesh(2, 2, BRICK_HEIGHT_MM)
    bricks = []
    for i in range(n_bricks):
        part = _colored(base, _PALETTE[i % len(_PALETTE)])
        placement = Pose6DoF(np.eye(3), np.array([0.0, 0.0, i * BRICK_HEIGHT_MM]))
        bricks.append(PlacedBrick(part, placement, i + 1))
    metadata = ()
    if metadata_step is not None:
        metadata = (
            StepMetadata(
                metadata_step,
                "Keystone",
                "This course locks the arch; check alignment before pressing down.",
            ),
        )
    return AssemblyModel(tuple(bricks), metadata, TOWER_ANCHOR)


def make_plate_model(cols: int, rows: int, layers: int = 1) -> AssemblyModel:
    """Row-major grid of 2x2 bricks (cols x rows per layer), bottom-up.

    Useful for large triangle counts: total bricks = cols * rows * layers.
    """
    base = generate_brick_mesh(2, 2, BRICK_HEIGHT_MM)
    bricks = []
    step = 1
    for layer in range(layers):
        for r in range(rows):
            for c in range(cols):
                part = _colored(base, _PALETTE[(step - 1) % len(_PALETTE)])
                t = np.array([c * 16.0, r * 16.0, layer * BRICK_HEIGHT_MM])
                bricks.append(PlacedBrick(part, Pose6DoF(np.eye(3), t), step))
                step += 1
    anchor = Pose6DoF(np.eye(3), np.array([-80.0, -8.0 - rows * 8.0, 0.0]))
    return AssemblyModel(tuple(bricks), (), anchor)


def make_scatter_model(n_bricks: int, rng: np.random.Generator) -> AssemblyModel:
    """Random bricks scattered and stacked over the plate, lower layers first."""
    bricks = []
    placements = []
    for i in range(n_bricks):
        sw = int(rng.integers(1, 3))
        sd = int(rng.integers(1, 4))
        layer = i * 3 // n_bricks  # earlier steps on lower layers
        x = float(rng.uniform(-60, 60))
        y = float(rng.uniform(-40, 40))
        yaw = float(rng.choice([0.0, math.pi / 2]))
        part = _colored(generate_brick_mesh(sw, sd, BRICK_HEIGHT_MM),
                        _PALETTE[i % len(_PALETTE)])
        placement = Pose6DoF(
            rotation_about_axis([0, 0, 1], yaw),
            np.array([x, y, layer * BRICK_HEIGHT_MM]),
        )
        placements.append((part, placement))
    for i, (part, placement) in enumerate(placements):
        bricks.append(PlacedBrick(part, placement, i + 1))
    return AssemblyModel(tuple(bricks), (), Pose6DoF.identity())


def make_orbit_truth(
    model: AssemblyModel,
    n_frames: int,
    distance_mm: float = 400.0,
    elevation_deg: float = 55.0,
    yaw_sweep_deg: float = 60.0,
    marker: MarkerSpec | None = None,
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
    built_breakpoints=((0, 0),),
    hand: HandSpec | None = None,
    seed: int = 0,
    pixel_noise_sigma: float = 0.0,
) -> SceneTruth:
    """Camera orbiting the marker at fixed distance/elevation."""
    if marker is None:
        marker = default_marker_spec()
    keys = []
    n_keys = max(2, min(n_frames, 8))
    for ki in range(n_keys):
        frame = round(ki * (n_frames - 1) / (n_keys - 1))
        yaw = math.radians(-yaw_sweep_deg / 2 + yaw_sweep_deg * ki / (n_keys - 1))
        el = math.radians(elevation_deg)
        pos = np.array(
            [
                distance_mm * math.cos(el) * math.sin(yaw),
                -distance_mm * math.cos(el) * math.cos(yaw),
                distance_mm * math.sin(el),
            ]
        )
        keys.append((frame, look_at_marker(pos, up_hint=(0, 0, 1))))
    return SceneTruth(
        n_frames=n_frames,
        camera_keyframes=tuple(keys),
        model=model,
        marker=marker,
        built_breakpoints=tuple(built_breakpoints),
        hand=hand,
        intrinsics=intrinsics,
        pixel_noise_sigma=pixel_noise_sigma,
        seed=seed,
    )


def make_static_truth(
    model: AssemblyModel,
    n_frames: int,
    camera_pos=(0.0, -180.0, 380.0),
    marker: MarkerSpec | None = None,
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
    built_breakpoints=((0, 0),),
    hand: HandSpec | None = None,
    seed: int = 0,
) -> SceneTruth:
    if marker is None:
        marker = default_marker_spec()
    pose = look_at_marker(np.asarray(camera_pos, dtype=float), up_hint=(0, 0, 1))
    return SceneTruth(
        n_frames=n_frames,
        camera_keyframes=((0, pose),),
        model=model,
        marker=marker,
        built_breakpoints=tuple(built_breakpoints),
        hand=hand,
        intrinsics=intrinsics,
        seed=seed,
    )


def make_hand_truth(
    seed: int,
    n_frames: int = 1,
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS,
) -> SceneTruth:
    """Static desk scene with 1-2 moving skin-colored blobs."""
    rng = np.random.default_rng(seed)
    n_blobs = int(rng.integers(1, 3))
    blobs = []
    for _ in range(n_blobs):
        u0 = float(rng.uniform(250, intrinsics.width - 250))
        v0 = float(rng.uniform(200, intrinsics.height - 200))
        du = float(rng.uniform(-60, 60))
        dv = float(rng.uniform(-40, 40))
        ru = float(rng.uniform(110, 180))
        rv = float(rng.uniform(90, 150))
        blobs.append(
            HandBlob(
                path=((0, u0, v0), (max(1, n_frames - 1), u0 + du, v0 + dv)),
                ru=ru,
                rv=rv,
            )
        )
    model = make_tower_model(1)
    return make_static_truth(
        model,
        n_frames,
        marker=default_marker_spec(),
        intrinsics=intrinsics,
        hand=HandSpec(tuple(blobs)),
        seed=seed,
    )


def write_hand_corpus(out_dir: str | Path, n_frames: int = 50, seed: int = 0) -> Path:
    """Synthetic hand-evaluation corpus: CbCr rasters + truth masks + index.

    Each entry also records two suggested touch points inside the hand area
    (the seeding gesture a player would perform).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n_frames):
        truth = make_hand_truth(seed * 10_000 + i, n_frames=1)
        color, cbcr = render_reality_frame(truth, 0)
        mask = hand_truth_mask(truth, 0)
        rng = np.random.default_rng((seed, i))
        # touches land well inside the hand area, the way a person taps
        interior = ndimage.binary_erosion(mask, iterations=12)
        if not interior.any():
            interior = mask
        ys, xs = np.nonzero(interior)
        picks = rng.choice(len(xs), size=2, replace=False)
        touches = [[float(xs[p]), float(ys[p])] for p in picks]
        cbcr_name = f"cbcr_{i:03d}.bin"
        mask_name = f"mask_{i:03d}.pgm"
        (out / cbcr_name).write_bytes(write_cbcr(cbcr.data))
        (out / mask_name).write_bytes(write_pgm(mask))
        entries.append(
            {
                "cbcr": cbcr_name,
                "mask": mask_name,
                "screen_width": truth.intrinsics.width,
                "screen_height": truth.intrinsics.height,
                "touches": touches,
            }
        )
    index = out / "index.json"
    index.write_text(json.dumps({"entries": entries}, sort_keys=True, indent=2))
    return index
