/**
 * Snapshot store — the single source of truth for every widget.
 *
 * The UI never mutates session state locally: all rendering derives from the
 * latest server snapshot. Binary frames are held latest-wins (a newer frame
 * replaces an undrawn older one); snapshots are never skipped.
 */

import { Snapshot, VideoFrame } from "./protocol";

export type ConnectionState = "connecting" | "open" | "closed";

export interface UiState {
  snapshot: Snapshot | null;
  connection: ConnectionState;
  lastError: string | null;
  seedMode: boolean;
}

type Listener = (state: UiState) => void;

export class Store {
  private state: UiState = {
    snapshot: null,
    connection: "connecting",
    lastError: null,
    seedMode: false,
  };
  private pendingFrame: VideoFrame | null = null;
  private listeners: Listener[] = [];
  framesDropped = 0;

  get(): UiState {
    return this.state;
  }

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  applySnapshot(snapshot: Snapshot): void {
    this.state = { ...this.state, snapshot, lastError: null };
    this.emit();
  }

  applyError(message: string): void {
    this.state = { ...this.state, lastError: message };
    this.emit();
  }

  setConnection(connection: ConnectionState): void {
    this.state = { ...this.state, connection };
    this.emit();
  }

  setSeedMode(on: boolean): void {
    this.state = { ...this.state, seedMode: on };
    this.emit();
  }

  /** Queue a frame for the next draw; stale undrawn frames are dropped. */
  pushFrame(frame: VideoFrame): void {
    if (this.pendingFrame !== null) this.framesDropped++;
    this.pendingFrame = frame;
  }

  /** Hand the latest undrawn frame to the render loop, if any. */
  takeFrame(): VideoFrame | null {
    const frame = this.pendingFrame;
    this.pendingFrame = null;
    return frame;
  }
}
