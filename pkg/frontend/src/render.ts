/**
 * Render loop: draws the latest undrawn frame each animation tick and keeps
 * the widgets in sync with the snapshot store.
 */

import { rgbToRgba } from "./protocol";
import { Store, UiState } from "./store";

export interface Widgets {
  stepIndicator: HTMLElement;
  trackingBadge: HTMLElement;
  infoTitle: HTMLElement;
  infoBody: HTMLElement;
  banner: HTMLElement;
  seedButton: HTMLElement;
  handToggle: HTMLInputElement;
  gridSlider: HTMLInputElement;
}

export function startRenderLoop(
  canvas: HTMLCanvasElement,
  store: Store,
  raf: (cb: () => void) => void = (cb) => requestAnimationFrame(cb)
): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null) throw new Error("2d canvas context unavailable");
  const tick = () => {
    const frame = store.takeFrame();
    if (frame !== null) {
      if (canvas.width !== frame.width || canvas.height !== frame.height) {
        canvas.width = frame.width;
        canvas.height = frame.height;
      }
      ctx.putImageData(
        new ImageData(rgbToRgba(frame), frame.width, frame.height),
        0,
        0
      );
    }
    raf(tick);
  };
  raf(tick);
}

export function updateWidgets(w: Widgets, state: UiState): void {
  const snap = state.snapshot;
  if (snap !== null) {
    w.stepIndicator.textContent =
      snap.current_step === "complete"
        ? "Complete"
        : `${snap.current_step} / ${snap.final_step}`;
    w.trackingBadge.textContent =
      snap.mode === "tracking"
        ? `Tracking (${Math.round(snap.quality * 100)}%)`
        : "Lost";
    w.trackingBadge.className = `badge ${snap.mode}`;
    w.infoTitle.textContent = snap.step_info?.title ?? "";
    w.infoBody.textContent = snap.step_info?.body ?? "";
    w.handToggle.checked = snap.hand_enabled;
    w.gridSlider.value = String(snap.grid_cell_px);
  }
  w.seedButton.classList.toggle("active", state.seedMode);
  if (state.connection !== "open") {
    w.banner.textContent = "Connection lost — reconnecting…";
    w.banner.style.display = "block";
  } else if (state.lastError !== null) {
    w.banner.textContent = state.lastError;
    w.banner.style.display = "block";
  } else {
    w.banner.style.display = "none";
  }
}
