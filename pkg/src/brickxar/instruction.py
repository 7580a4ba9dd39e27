"""Step-by-step session state machine and per-frame AR frame production.

States are immutable snapshots: ``advance_step`` / ``retreat_step`` are the
user-driven transitions, ``frame_update`` is the per-frame render path and
only ever changes the embedded tracking state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import BoundaryError, CompleteError, SizeError
from .geometry import CameraIntrinsics, Pose6DoF
from .hand import (
    CbCrFrame,
    ColorSeed,
    HexOccluder,
    detect_hand,
    hexes_mesh_camera_frame,
)
from .marker import (
    MarkerSpec,
    TrackingMode,
    TrackingState,
    detect_features,
    update_tracking,
)
from .model import AssemblyModel, Mesh, StepMetadata
from .render import (
    ARFrame,
    Material,
    MaterialKind,
    Shaded,
    Wireframe,
    composite,
    rasterize,
)

__all__ = ["BrickStatus", "SessionState", "begin_session", "frame_update",
           "advance_step", "retreat_step", "step_info", "hand_pass",
           "min_guide_depth", "COMPLETE"]

COMPLETE = "complete"


class BrickStatus(Enum):
    FUTURE = "future"
    CURRENT = "current"
    PLACED = "placed"


@dataclass(frozen=True)
class SessionState:
    model: AssemblyModel
    marker_spec: MarkerSpec
    intrinsics: CameraIntrinsics
    current_step: int | str  # 1..final_step or COMPLETE
    tracking: TrackingState
    guide_style: Shaded | Wireframe
    hand_enabled: bool = False

    @property
    def complete(self) -> bool:
        return self.current_step == COMPLETE

    def statuses(self) -> tuple[BrickStatus, ...]:
        """Per-brick status, in step order."""
        cur = self.model.final_step + 1 if self.complete else self.current_step
        out = []
        for b in self.model.bricks:
            if b.step_index < cur:
                out.append(BrickStatus.PLACED)
            elif b.step_index == cur:
                out.append(BrickStatus.CURRENT)
            else:
                out.append(BrickStatus.FUTURE)
        return tuple(out)


def begin_session(
    model: AssemblyModel,
    marker_spec: MarkerSpec,
    intrinsics: CameraIntrinsics,
    guide_style: Shaded | Wireframe | None = None,
    hand_enabled: bool = False,
) -> SessionState:
    """Fresh session at step 1, tracking Lost at identity."""
    if guide_style is None:
        guide_style = Shaded((60, 220, 60), 1.0)
    return SessionState(
        model=model,
        marker_spec=marker_spec,
        intrinsics=intrinsics,
        current_step=1,
        tracking=TrackingState.initial(marker_spec.feature_count()),
        guide_style=guide_style,
        hand_enabled=hand_enabled,
    )


def frame_update(
    state: SessionState,
    camera_feed: np.ndarray,
    hand_occluders: list[HexOccluder] | None = None,
) -> tuple[ARFrame, SessionState]:
    """Run detection + tracking on the feed and compose the AR frame.

    Returns the frame and the state with the refreshed tracking (step statuses
    never change here).  In Lost mode the frozen pose is used unchanged; any
    drift against the real camera is visible, by design.
    """
    k = state.intrinsics
    if camera_feed.shape[:2] != (k.height, k.width):
        raise SizeError(f"feed {camera_feed.shape[:2]} != intrinsics {(k.height, k.width)}")

    detection = detect_features(camera_feed, state.marker_spec, k)
    tracking = update_tracking(state.tracking, detection, k)
    new_state = replace(state, tracking=tracking)

    if state.complete or (
        tracking.mode is TrackingMode.LOST and tracking.quality == 0.0
        and tracking.pose == Pose6DoF.identity()
    ):
        # complete, or never acquired: pass the feed through
        empty = rasterize([], tracking.extrinsics, k)
        return composite(camera_feed, empty), new_state

    extr = tracking.extrinsics
    verts, _, _ = state.model.world_geometry
    items = []
    occ_tris = state.model.occluder_triangles(state.current_step)
    if len(occ_tris):
        items.append((Mesh(verts, occ_tris), Pose6DoF.identity(), Material.occluder()))
    guide_brick = state.model.bricks[state.current_step - 1]
    items.append(
        (
            guide_brick.part.mesh,
            state.model.world_placements[state.current_step - 1],
            Material(MaterialKind.GUIDE, state.guide_style),
        )
    )
    if hand_occluders:
        # hexagons are defined in the camera frame; undo the extrinsics so the
        # shared rasterizer (which applies them) puts them back
        from .geometry import pose_invert

        cam_to_world = pose_invert(extr)
        items.append(
            (hexes_mesh_camera_frame(hand_occluders, k), cam_to_world, Material.occluder())
        )
    overlay = rasterize(items, extr, k)
    return composite(camera_feed, overlay), new_state


def min_guide_depth(state: SessionState) -> float | None:
    """Nearest camera-space depth of the current guide brick, if placeable."""
    if state.complete or state.tracking.quality == 0.0:
        return None
    brick = state.model.bricks[state.current_step - 1]
    world = state.model.world_placements[state.current_step - 1].apply(
        brick.part.mesh.vertices
    )
    z = state.tracking.extrinsics.apply(world)[:, 2]
    zmin = float(z.min())
    return zmin if zmin > state.intrinsics.near_mm else None


def hand_pass(
    state: SessionState,
    cbcr: CbCrFrame,
    seeds: list[ColorSeed],
    cell_px: int = 10,
    min_blob_cells: int | None = None,
) -> list[HexOccluder]:
    """Per-frame hand occlusion pass; empty when disabled or unseeded."""
    if not state.hand_enabled or not seeds:
        return []
    _, hexes = detect_hand(
        cbcr,
        seeds,
        state.intrinsics,
        cell_px=cell_px,
        min_blob_cells=min_blob_cells,
        scene_min_guide_depth_mm=min_guide_depth(state),
    )
    return hexes


def advance_step(state: SessionState) -> SessionState:
    if state.complete:
        raise CompleteError("session already complete")
    nxt = state.current_step + 1
    return replace(state, current_step=COMPLETE if nxt > state.model.final_step else nxt)


def retreat_step(state: SessionState) -> SessionState:
    if state.complete:
        return replace(state, current_step=state.model.final_step)
    if state.current_step <= 1:
        raise BoundaryError("already at the first step")
    return replace(state, current_step=state.current_step - 1)


def step_info(state: SessionState) -> StepMetadata | None:
    if state.complete:
        return None
    return state.model.metadata_for(state.current_step)
