"""WebSocket session service: the live backend consumed by the browser UI.

Wire protocol (see docs/wire-protocol.md): text frames carry UTF-8 JSON
messages; binary frames carry a 12-byte little-endian header (frame_index,
width, height as u32) followed by the RGB8 payload.  Every inbound message is
acknowledged with a state snapshot; a fresh rendered frame follows the ack.
"""

from __future__ import annotations

import asyncio
import json
import logging
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from fastapi import FastAPI, Response, WebSocket, WebSocketDisconnect

from .errors import BrickxarError
from .geometry import DEFAULT_INTRINSICS
from .hand import CbCrFrame, ColorSeed, add_seed
from .imageio import write_pgm
from .instruction import (
    SessionState,
    advance_step,
    begin_session,
    frame_update,
    hand_pass,
    retreat_step,
    step_info,
)
from .marker import default_marker_spec
from .model import AssemblyModel
from .render import Shaded, Wireframe
from .sim import SceneTruth, hand_truth_mask, look_at_marker, render_reality_frame

log = logging.getLogger("brickxar.service")

__all__ = ["build_app", "serve_session", "SessionDriver"]


@dataclass
class SessionDriver:
    """One connection's state: the instruction session plus live-scene knobs.

    Pure with respect to I/O: ``apply`` folds one inbound event, ``render``
    produces the next frame.  The WebSocket layer is a thin shell around it,
    which is also what makes the snapshot-consistency property testable
    in-process.
    """

    model: AssemblyModel
    truth: SceneTruth | None = None
    grid_cell_px: int = 10
    tol_cbcr: float = 12.0
    state: SessionState = None
    seeds: list[ColorSeed] = field(default_factory=list)
    orbit: dict = field(default_factory=lambda: {"yaw": 0.0, "pitch": 55.0, "radius": 400.0})
    frame_index: int = 0
    last_cbcr: CbCrFrame | None = None
    last_guide_mask: np.ndarray | None = None

    def __post_init__(self):
        marker = self.truth.marker if self.truth else default_marker_spec()
        intr = self.truth.intrinsics if self.truth else DEFAULT_INTRINSICS
        if self.state is None:
            self.state = begin_session(self.model, marker, intr)

    # -- inbound events -------------------------------------------------------

    def apply(self, event: dict) -> None:
        """Fold one inbound event into the session; raises on invalid input."""
        kind = event.get("type")
        if kind == "advance":
            self.state = advance_step(self.state)
        elif kind == "retreat":
            self.state = retreat_step(self.state)
        elif kind == "orbit_camera":
            self.orbit = {
                "yaw": float(event["yaw"]),
                "pitch": float(np.clip(float(event["pitch"]), 5.0, 85.0)),
                "radius": float(np.clip(float(event["radius"]), 150.0, 1200.0)),
            }
        elif kind == "touch_seed":
            if self.last_cbcr is None:
                raise BrickxarError("no frame rendered yet")
            self.seeds = add_seed(
                self.seeds,
                (float(event["u"]), float(event["v"])),
                self.last_cbcr,
                tol_cb=self.tol_cbcr,
                tol_cr=self.tol_cbcr,
            )
        elif kind == "set_hand":
            self.state = replace(self.state, hand_enabled=bool(event["on"]))
        elif kind == "set_guide_style":
            style = event["style"]
            if style == "shaded":
                self.state = replace(self.state, guide_style=Shaded((60, 220, 60), 1.0))
            elif style == "wireframe":
                self.state = replace(self.state, guide_style=Wireframe((240, 240, 60)))
            else:
                raise BrickxarError(f"unknown guide style: {style}")
        elif kind == "set_grid":
            cell = int(event["cell_px"])
            if not 2 <= cell <= 80:
                raise BrickxarError("cell_px out of range [2, 80]")
            self.grid_cell_px = cell
        else:
            raise BrickxarError(f"unknown message type: {kind}")

    # -- frame production -----------------------------------------------------

    def _scene_truth(self) -> tuple[SceneTruth, int]:
        if self.truth is not None:
            return self.truth, min(self.frame_index, self.truth.n_frames - 1)
        yaw = math.radians(self.orbit["yaw"])
        el = math.radians(self.orbit["pitch"])
        r = self.orbit["radius"]
        pos = np.array(
            [
                r * math.cos(el) * math.sin(yaw),
                -r * math.cos(el) * math.cos(yaw),
                r * math.sin(el),
            ]
        )
        built = (
            self.state.model.final_step
            if self.state.complete
            else self.state.current_step - 1
        )
        live = SceneTruth(
            n_frames=1,
            camera_keyframes=((0, look_at_marker(pos, up_hint=(0, 0, 1))),),
            model=self.model,
            marker=self.state.marker_spec,
            built_breakpoints=((0, built),),
            intrinsics=self.state.intrinsics,
            seed=0,
        )
        return live, 0

    def render(self) -> np.ndarray:
        """Advance one frame; returns the composed RGB image."""
        truth, t = self._scene_truth()
        feed, cbcr = render_reality_frame(truth, t)
        self.last_cbcr = cbcr
        hexes = hand_pass(
            self.state, cbcr, self.seeds, cell_px=self.grid_cell_px
        )
        frame, self.state = frame_update(self.state, feed, hexes or None)
        self.last_guide_mask = frame.guide_mask
        self.frame_index += 1
        return frame.composed

    def snapshot(self) -> dict:
        info = step_info(self.state)
        return {
            "type": "snapshot",
            "current_step": self.state.current_step,
            "final_step": self.state.model.final_step,
            "mode": self.state.tracking.mode.value,
            "quality": round(self.state.tracking.quality, 6),
            "step_info": None
            if info is None
            else {"title": info.title, "body": info.body_text},
            "hand_enabled": self.state.hand_enabled,
            "guide_style": "wireframe"
            if isinstance(self.state.guide_style, Wireframe)
            else "shaded",
            "grid_cell_px": self.grid_cell_px,
            "seeds": len(self.seeds),
            "frame_index": self.frame_index,
        }


def build_app(
    model: AssemblyModel,
    truth: SceneTruth | None = None,
    grid_cell_px: int = 10,
    tol_cbcr: float = 12.0,
    test_mode: bool = False,
) -> FastAPI:
    app = FastAPI()
    app.state.last_driver = None

    @app.get("/health")
    def health():
        return {"ok": True}

    if test_mode:

        @app.get("/test/truth-mask")
        def truth_mask(t: int = 0):
            if truth is None:
                return Response(status_code=404)
            mask = hand_truth_mask(truth, min(t, truth.n_frames - 1))
            return Response(write_pgm(mask), media_type="image/x-portable-graymap")

        @app.get("/test/guide-mask")
        def guide_mask():
            drv = app.state.last_driver
            if drv is None or drv.last_guide_mask is None:
                return Response(status_code=404)
            return Response(
                write_pgm(drv.last_guide_mask), media_type="image/x-portable-graymap"
            )

    @app.websocket("/session")
    async def session(ws: WebSocket):
        await ws.accept()
        driver = SessionDriver(
            model=model, truth=truth, grid_cell_px=grid_cell_px, tol_cbcr=tol_cbcr
        )
        app.state.last_driver = driver

        async def send_frame():
            composed = await asyncio.to_thread(driver.render)
            h, w = composed.shape[:2]
            header = struct.pack("<III", driver.frame_index - 1, w, h)
            await ws.send_bytes(header + composed.tobytes())

        try:
            await ws.send_text(json.dumps(driver.snapshot(), sort_keys=True))
            await send_frame()
            while True:
                raw = await ws.receive_text()
                try:
                    event = json.loads(raw)
                    if not isinstance(event, dict):
                        raise BrickxarError("message must be a JSON object")
                    driver.apply(event)
                except (BrickxarError, KeyError, ValueError, TypeError) as exc:
                    await ws.send_text(
                        json.dumps({"type": "error", "message": str(exc)})
                    )
                # every inbound is acknowledged with a snapshot, then a frame
                await ws.send_text(json.dumps(driver.snapshot(), sort_keys=True))
                await send_frame()
        except WebSocketDisconnect:
            log.info("session closed")

    return app


def serve_session(
    model: AssemblyModel,
    truth: SceneTruth | None = None,
    port: int = 8750,
    host: str = "127.0.0.1",
    grid_cell_px: int = 10,
    tol_cbcr: float = 12.0,
    test_mode: bool = False,
) -> None:
    """Run the session service until interrupted."""
    import uvicorn

    app = build_app(
        model,
        truth=truth,
        grid_cell_px=grid_cell_px,
        tol_cbcr=tol_cbcr,
        test_mode=test_mode,
    )
    uvicorn.run(app, host=host, port=port, log_level="warning")
