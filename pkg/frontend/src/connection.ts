/**
 * WebSocket plumbing: parse, queue, pump, reconnect.
 *
 * Incoming messages land in a frame queue and are folded into the
 * SessionView on the next scheduled pump, so message handling and
 * rendering stay decoupled and a burst of frames costs one render.
 * The socket constructor, the pump scheduler and the reconnect timer are
 * all injectable for tests.
 */

import { Command, ServerMsg, parseServerMessage, validateCommand } from './protocol';
import { SessionView } from './session';

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;
export type Scheduler = (cb: () => void) => void;
export type Timer = (cb: () => void, ms: number) => void;

const BACKOFF_BASE_MS = 500;
const BACKOFF_CAP_MS = 8000;

export interface ConnectionOptions {
  factory?: SocketFactory;
  schedule?: Scheduler;
  timer?: Timer;
  onRender?: () => void;
}

export class Connection {
  private ws: SocketLike | null = null;
  private queue: ServerMsg[] = [];
  private pumpScheduled = false;
  private attempts = 0;
  private closed = false;
  private readonly factory: SocketFactory;
  private readonly schedule: Scheduler;
  private readonly timer: Timer;
  private readonly onRender: () => void;

  constructor(
    readonly url: string,
    readonly view: SessionView,
    opts: ConnectionOptions = {},
  ) {
    this.factory = opts.factory ?? ((u) => new WebSocket(u) as unknown as SocketLike);
    this.schedule = opts.schedule ?? ((cb) => queueMicrotask(cb));
    this.timer = opts.timer ?? ((cb, ms) => setTimeout(cb, ms));
    this.onRender = opts.onRender ?? (() => {});
  }

  connect(): void {
    this.closed = false;
    this.view.setState(this.attempts === 0 ? 'connecting' : 'reconnecting');
    this.onRender();
    const ws = this.factory(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.attempts = 0;
      this.view.setState('connected');
      this.onRender();
    };
    ws.onmessage = (ev) => {
      const msg = parseServerMessage(String(ev.data));
      if (msg !== null) {
        this.queue.push(msg);
        this.schedulePump();
      }
    };
    ws.onclose = () => this.handleDrop();
    ws.onerror = () => {
      // onclose follows on real sockets; nothing to do beyond logging space
    };
  }

  /** Stop for good (page teardown); no reconnect afterwards. */
  close(): void {
    this.closed = true;
    this.view.setState('disconnected');
    this.ws?.close();
    this.ws = null;
    this.onRender();
  }

  /**
   * Send one command if connected.  Returns true when it went out; a
   * disconnected console never emits, it only renders the offline state.
   */
  send(cmd: Command): boolean {
    if (!this.view.connected || this.ws === null) return false;
    const reason = validateCommand(cmd);
    if (reason !== null) return false;
    this.ws.send(JSON.stringify(cmd));
    this.view.noteSent(cmd);
    this.onRender();
    return true;
  }

  /** Drain the frame queue into the view, then render once. */
  pump(): void {
    this.pumpScheduled = false;
    if (this.queue.length === 0) return;
    const batch = this.queue;
    this.queue = [];
    for (const msg of batch) this.view.applyMessage(msg);
    this.onRender();
  }

  private schedulePump(): void {
    if (this.pumpScheduled) return;
    this.pumpScheduled = true;
    this.schedule(() => this.pump());
  }

  private handleDrop(): void {
    this.ws = null;
    if (this.closed) return;
    this.view.setState('reconnecting');
    this.onRender();
    const wait = Math.min(BACKOFF_CAP_MS, BACKOFF_BASE_MS * 2 ** this.attempts);
    this.attempts += 1;
    this.timer(() => {
      if (!this.closed) this.connect();
    }, wait);
  }
}
