/**
 * Session WebSocket client: dispatches inbound messages to the store and
 * reconnects with exponential backoff after a drop.
 */

import { ClientEvent, decodeFrame, parseServerMessage } from "./protocol";
import { Store } from "./store";

// minimal structural interface so tests can inject a fake socket
export interface SocketLike {
  binaryType: string;
  onopen: ((ev: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

const BACKOFF_BASE_MS = 500;
const BACKOFF_MAX_MS = 8000;

export class SessionClient {
  private socket: SocketLike | null = null;
  private attempts = 0;
  private closed = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private url: string,
    private store: Store,
    private makeSocket: SocketFactory = (u) => new WebSocket(u) as unknown as SocketLike
  ) {}

  connect(): void {
    this.store.setConnection("connecting");
    const socket = this.makeSocket(this.url);
    socket.binaryType = "arraybuffer";
    socket.onopen = () => {
      this.attempts = 0;
      this.store.setConnection("open");
    };
    socket.onmessage = (ev) => this.handleMessage(ev.data);
    socket.onclose = () => this.handleDrop();
    socket.onerror = () => {
      // onclose follows; nothing to do here
    };
    this.socket = socket;
  }

  close(): void {
    this.closed = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.socket?.close();
  }

  send(event: ClientEvent): void {
    if (this.store.get().connection !== "open" || this.socket === null) return;
    this.socket.send(JSON.stringify(event));
  }

  backoffMs(attempt: number): number {
    return Math.min(BACKOFF_BASE_MS * 2 ** attempt, BACKOFF_MAX_MS);
  }

  private handleMessage(data: unknown): void {
    try {
      if (typeof data === "string") {
        const msg = parseServerMessage(data);
        if (msg.type === "snapshot") this.store.applySnapshot(msg);
        else this.store.applyError(msg.message);
      } else if (data instanceof ArrayBuffer) {
        this.store.pushFrame(decodeFrame(data));
      }
    } catch (err) {
      this.store.applyError(err instanceof Error ? err.message : String(err));
    }
  }

  private handleDrop(): void {
    if (this.closed) return;
    this.store.setConnection("closed");
    const delay = this.backoffMs(this.attempts++);
    this.reconnectTimer = setTimeout(() => this.connect(), delay);
  }
}
