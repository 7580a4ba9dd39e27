import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { SessionClient, SocketLike } from "../src/client";
import { Store } from "../src/store";

class FakeSocket implements SocketLike {
  binaryType = "blob";
  onopen: ((ev: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev: unknown) => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;
  sent: string[] = [];

  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {
    this.onclose?.({});
  }
}

function makeFrameBuffer(index: number): ArrayBuffer {
  const buf = new ArrayBuffer(12 + 3);
  const view = new DataView(buf);
  view.setUint32(0, index, true);
  view.setUint32(4, 1, true);
  view.setUint32(8, 1, true);
  return buf;
}

describe("SessionClient", () => {
  let sockets: FakeSocket[];
  let store: Store;
  let client: SessionClient;

  beforeEach(() => {
    vi.useFakeTimers();
    sockets = [];
    store = new Store();
    client = new SessionClient("ws://test/session", store, () => {
      const s = new FakeSocket();
      sockets.push(s);
      return s;
    });
  });

  afterEach(() => {
    client.close();
    vi.useRealTimers();
  });

  it("requests binary arraybuffers and tracks connection state", () => {
    client.connect();
    expect(sockets[0].binaryType).toBe("arraybuffer");
    expect(store.get().connection).toBe("connecting");
    sockets[0].onopen!({});
    expect(store.get().connection).toBe("open");
  });

  it("dispatches snapshots, errors and frames to the store", () => {
    client.connect();
    sockets[0].onopen!({});
    sockets[0].onmessage!({
      data: '{"type":"snapshot","current_step":1,"final_step":5,"mode":"lost","quality":0,"step_info":null,"hand_enabled":false,"guide_style":"shaded","grid_cell_px":10,"seeds":0,"frame_index":0}',
    });
    expect(store.get().snapshot!.current_step).toBe(1);
    sockets[0].onmessage!({ data: '{"type":"error","message":"nope"}' });
    expect(store.get().lastError).toBe("nope");
    sockets[0].onmessage!({ data: makeFrameBuffer(3) });
    expect(store.takeFrame()!.frameIndex).toBe(3);
  });

  it("surfaces malformed server data as an error instead of crashing", () => {
    client.connect();
    sockets[0].onopen!({});
    sockets[0].onmessage!({ data: "{not json" });
    expect(store.get().lastError).toMatch(/JSON|Unexpected/);
  });

  it("sends events in order and only while open", () => {
    client.connect();
    client.send({ type: "advance" }); // still connecting: dropped
    sockets[0].onopen!({});
    client.send({ type: "touch_seed", u: 10, v: 20 });
    client.send({ type: "touch_seed", u: 30, v: 40 });
    expect(sockets[0].sent.map((s) => JSON.parse(s).u)).toEqual([10, 30]);
  });

  it("reconnects with exponential backoff after a drop", () => {
    client.connect();
    sockets[0].onopen!({});
    sockets[0].onclose!({});
    expect(store.get().connection).toBe("closed");
    vi.advanceTimersByTime(client.backoffMs(0));
    expect(sockets.length).toBe(2);
    sockets[1].onclose!({});
    expect(client.backoffMs(1)).toBeGreaterThan(client.backoffMs(0));
    vi.advanceTimersByTime(client.backoffMs(1));
    expect(sockets.length).toBe(3);
    sockets[2].onopen!({});
    expect(store.get().connection).toBe("open");
  });
});
