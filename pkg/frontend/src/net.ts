// WebSocket client with at most one in-flight request (latest wins) and
// automatic reconnection with visible status.

import type { Frame, FrameMeta, ServerMessage, ViewRequest } from './protocol.js';
import { clampTime, parseFrame } from './protocol.js';

export type Status = 'connecting' | 'connected' | 'disconnected';

export interface ClientEvents {
  onFrame: (meta: FrameMeta, frame: Frame) => void;
  onStatus?: (status: Status) => void;
  onError?: (code: string, message: string) => void;
}

export class StreamClient {
  private ws: WebSocket | null = null;
  private url: string;
  private events: ClientEvents;
  private pending: ViewRequest | null = null; // latest-wins slot
  private inFlight = false;
  private nextReqId = 1;
  private pendingMeta: FrameMeta | null = null;
  private retryMs = 500;
  private closed = false;

  constructor(url: string, events: ClientEvents) {
    this.url = url;
    this.events = events;
    this.connect();
  }

  private connect(): void {
    this.events.onStatus?.('connecting');
    const ws = new WebSocket(this.url);
    ws.binaryType = 'arraybuffer';
    this.ws = ws;
    ws.onopen = () => {
      this.retryMs = 500;
      this.inFlight = false;
      this.events.onStatus?.('connected');
      this.flush();
    };
    ws.onmessage = (ev) => this.handleMessage(ev.data);
    ws.onclose = () => {
      this.events.onStatus?.('disconnected');
      this.inFlight = false;
      if (!this.closed) {
        setTimeout(() => this.connect(), this.retryMs);
        this.retryMs = Math.min(this.retryMs * 2, 5000);
      }
    };
    ws.onerror = () => ws.close();
  }

  private handleMessage(data: string | ArrayBuffer): void {
    if (typeof data === 'string') {
      const msg = JSON.parse(data) as ServerMessage;
      if (msg.type === 'error') {
        this.inFlight = false;
        this.events.onError?.(msg.code, msg.message);
        this.flush();
      } else {
        this.pendingMeta = msg;
      }
      return;
    }
    const meta = this.pendingMeta;
    this.pendingMeta = null;
    this.inFlight = false;
    if (meta) {
      this.events.onFrame(meta, parseFrame(data));
    }
    this.flush();
  }

  /** Queue a request; a newer one replaces anything not yet sent. */
  request(req: Omit<ViewRequest, 'req_id'>): void {
    this.pending = { ...req, time: clampTime(req.time), req_id: this.nextReqId++ };
    this.flush();
  }

  private flush(): void {
    if (this.inFlight || !this.pending || !this.ws
        || this.ws.readyState !== WebSocket.OPEN) {
      return;
    }
    const req = this.pending;
    this.pending = null;
    this.inFlight = true;
    this.ws.send(JSON.stringify(req));
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }
}
