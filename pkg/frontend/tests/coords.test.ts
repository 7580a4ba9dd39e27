import { describe, expect, it } from "vitest";

import { canvasToFrame } from "../src/coords";

describe("canvasToFrame", () => {
  it("maps a tap on a 2x scaled canvas to half coordinates", () => {
    const box = { left: 0, top: 0, width: 1920, height: 1440 };
    const { u, v } = canvasToFrame(640, 400, box, 960, 720);
    expect(u).toBeCloseTo(320, 6);
    expect(v).toBeCloseTo(200, 6);
  });

  it("round-trips every frame pixel within 1 px at odd scales", () => {
    const box = { left: 13, top: 7, width: 731, height: 549 };
    for (const [fu, fv] of [
      [0, 0],
      [959, 719],
      [480, 360],
      [123, 456],
    ]) {
      // canvas position of the pixel center, as the browser would report it
      const clientX = box.left + ((fu + 0.5) / 960) * box.width;
      const clientY = box.top + ((fv + 0.5) / 720) * box.height;
      const { u, v } = canvasToFrame(clientX, clientY, box, 960, 720);
      expect(Math.abs(u - (fu + 0.5))).toBeLessThanOrEqual(1);
      expect(Math.abs(v - (fv + 0.5))).toBeLessThanOrEqual(1);
    }
  });

  it("clamps taps on the border to valid frame coordinates", () => {
    const box = { left: 0, top: 0, width: 960, height: 720 };
    const { u, v } = canvasToFrame(960, 720, box, 960, 720);
    expect(u).toBe(959);
    expect(v).toBe(719);
    const origin = canvasToFrame(-5, -5, box, 960, 720);
    expect(origin.u).toBe(0);
    expect(origin.v).toBe(0);
  });
});
