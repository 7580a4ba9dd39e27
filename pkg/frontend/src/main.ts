/** Entry point: wires the DOM to the session client. */

import { SessionClient } from "./client";
import { canvasToFrame } from "./coords";
import { startRenderLoop, updateWidgets, Widgets } from "./render";
import { Store } from "./store";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

export function boot(): void {
  const canvas = el<HTMLCanvasElement>("ar-canvas");
  const widgets: Widgets = {
    stepIndicator: el("step-indicator"),
    trackingBadge: el("tracking-badge"),
    infoTitle: el("info-title"),
    infoBody: el("info-body"),
    banner: el("banner"),
    seedButton: el("seed-mode"),
    handToggle: el<HTMLInputElement>("hand-toggle"),
    gridSlider: el<HTMLInputElement>("grid-slider"),
  };

  const store = new Store();
  const proto = location.protocol === "https:" ? "wss" : "ws";
  const client = new SessionClient(`${proto}://${location.host}/session`, store);

  store.subscribe((state) => updateWidgets(widgets, state));
  startRenderLoop(canvas, store);
  client.connect();

  el("next").addEventListener("click", () => client.send({ type: "advance" }));
  el("back").addEventListener("click", () => client.send({ type: "retreat" }));
  widgets.seedButton.addEventListener("click", () =>
    store.setSeedMode(!store.get().seedMode)
  );
  widgets.handToggle.addEventListener("change", () =>
    client.send({ type: "set_hand", on: widgets.handToggle.checked })
  );
  widgets.gridSlider.addEventListener("change", () =>
    client.send({ type: "set_grid", cell_px: Number(widgets.gridSlider.value) })
  );

  // orbit state: drag on the canvas rotates the simulated camera
  const orbit = { yaw: 0, pitch: 35, radius: 420 };
  let dragging: { x: number; y: number } | null = null;

  canvas.addEventListener("pointerdown", (ev) => {
    if (store.get().seedMode) {
      const snap = store.get().snapshot;
      if (snap === null) return;
      const box = canvas.getBoundingClientRect();
      const { u, v } = canvasToFrame(
        ev.clientX,
        ev.clientY,
        box,
        canvas.width,
        canvas.height
      );
      client.send({ type: "touch_seed", u, v });
    } else {
      dragging = { x: ev.clientX, y: ev.clientY };
      canvas.setPointerCapture(ev.pointerId);
    }
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (dragging === null) return;
    orbit.yaw += (ev.clientX - dragging.x) * 0.4;
    orbit.pitch = Math.min(Math.max(orbit.pitch - (ev.clientY - dragging.y) * 0.3, 5), 85);
    dragging = { x: ev.clientX, y: ev.clientY };
    client.send({ type: "orbit_camera", ...orbit });
  });
  canvas.addEventListener("pointerup", () => {
    dragging = null;
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    orbit.radius = Math.min(Math.max(orbit.radius + ev.deltaY, 150), 1200);
    client.send({ type: "orbit_camera", ...orbit });
  });
}

if (typeof document !== "undefined" && document.getElementById("ar-canvas")) {
  boot();
}
