import { describe, expect, it } from "vitest";

import {
  decodeFrame,
  parseServerMessage,
  rgbToRgba,
  VideoFrame,
} from "../src/protocol";

function makeFrame(index: number, w: number, h: number): ArrayBuffer {
  const buf = new ArrayBuffer(12 + w * h * 3);
  const view = new DataView(buf);
  view.setUint32(0, index, true);
  view.setUint32(4, w, true);
  view.setUint32(8, h, true);
  const rgb = new Uint8Array(buf, 12);
  for (let i = 0; i < rgb.length; i++) rgb[i] = i % 251;
  return buf;
}

describe("decodeFrame", () => {
  it("reads the little-endian header and payload", () => {
    const frame = decodeFrame(makeFrame(7, 4, 3));
    expect(frame.frameIndex).toBe(7);
    expect(frame.width).toBe(4);
    expect(frame.height).toBe(3);
    expect(frame.rgb.length).toBe(4 * 3 * 3);
    expect(frame.rgb[5]).toBe(5);
  });

  it("rejects a truncated header", () => {
    expect(() => decodeFrame(new ArrayBuffer(8))).toThrow(/too short/);
  });

  it("rejects a payload length mismatch", () => {
    const buf = makeFrame(0, 4, 3).slice(0, 12 + 5);
    expect(() => decodeFrame(buf)).toThrow(/expected/);
  });
});

describe("parseServerMessage", () => {
  it("accepts snapshot and error messages", () => {
    const snap = parseServerMessage('{"type": "snapshot", "current_step": 1}');
    expect(snap.type).toBe("snapshot");
    const err = parseServerMessage('{"type": "error", "message": "nope"}');
    expect(err.type).toBe("error");
  });

  it("rejects non-objects and unknown types", () => {
    expect(() => parseServerMessage("42")).toThrow(/malformed/);
    expect(() => parseServerMessage('{"type": "mystery"}')).toThrow(/unknown/);
  });
});

describe("rgbToRgba", () => {
  it("expands RGB rows with opaque alpha", () => {
    const frame: VideoFrame = {
      frameIndex: 0,
      width: 2,
      height: 1,
      rgb: new Uint8Array([10, 20, 30, 40, 50, 60]),
    };
    const rgba = rgbToRgba(frame);
    expect(Array.from(rgba)).toEqual([10, 20, 30, 255, 40, 50, 60, 255]);
  });
});
