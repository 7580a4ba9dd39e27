/**
 * Wire protocol types for the session WebSocket.
 *
 * Text frames are JSON messages; binary frames are a 12-byte little-endian
 * header (frame_index u32, width u32, height u32) followed by RGB8 pixels.
 */

export interface StepInfo {
  title: string;
  body: string;
}

export interface Snapshot {
  type: "snapshot";
  current_step: number | "complete";
  final_step: number;
  mode: "tracking" | "lost";
  quality: number;
  step_info: StepInfo | null;
  hand_enabled: boolean;
  guide_style: "shaded" | "wireframe";
  grid_cell_px: number;
  seeds: number;
  frame_index: number;
}

export interface ErrorMessage {
  type: "error";
  message: string;
}

export type ServerMessage = Snapshot | ErrorMessage;

export type ClientEvent =
  | { type: "advance" }
  | { type: "retreat" }
  | { type: "orbit_camera"; yaw: number; pitch: number; radius: number }
  | { type: "touch_seed"; u: number; v: number }
  | { type: "set_hand"; on: boolean }
  | { type: "set_guide_style"; style: "shaded" | "wireframe" }
  | { type: "set_grid"; cell_px: number };

export interface VideoFrame {
  frameIndex: number;
  width: number;
  height: number;
  rgb: Uint8Array; // width * height * 3 bytes, row-major
}

const HEADER_BYTES = 12;

export function decodeFrame(buf: ArrayBuffer): VideoFrame {
  if (buf.byteLength < HEADER_BYTES) {
    throw new Error(`frame too short: ${buf.byteLength} bytes`);
  }
  const view = new DataView(buf);
  const frameIndex = view.getUint32(0, true);
  const width = view.getUint32(4, true);
  const height = view.getUint32(8, true);
  const expected = HEADER_BYTES + width * height * 3;
  if (buf.byteLength !== expected) {
    throw new Error(`frame payload ${buf.byteLength} != expected ${expected}`);
  }
  return { frameIndex, width, height, rgb: new Uint8Array(buf, HEADER_BYTES) };
}

export function parseServerMessage(text: string): ServerMessage {
  const msg = JSON.parse(text);
  if (msg === null || typeof msg !== "object" || typeof msg.type !== "string") {
    throw new Error("malformed server message");
  }
  if (msg.type !== "snapshot" && msg.type !== "error") {
    throw new Error(`unknown server message type: ${msg.type}`);
  }
  return msg as ServerMessage;
}

/** RGB8 rows expanded to the RGBA layout ImageData wants. */
export function rgbToRgba(frame: VideoFrame): Uint8ClampedArray<ArrayBuffer> {
  const n = frame.width * frame.height;
  // backed by an explicit ArrayBuffer so the ImageData constructor accepts it
  const out = new Uint8ClampedArray(new ArrayBuffer(n * 4));
  const rgb = frame.rgb;
  for (let i = 0; i < n; i++) {
    out[i * 4] = rgb[i * 3];
    out[i * 4 + 1] = rgb[i * 3 + 1];
    out[i * 4 + 2] = rgb[i * 3 + 2];
    out[i * 4 + 3] = 255;
  }
  return out;
}
