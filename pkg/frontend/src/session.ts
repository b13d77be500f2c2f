/**
 * Console state: a pure fold over received messages plus local inputs.
 *
 * Nothing in here touches the DOM, the clock or the network, so replaying
 * a recorded message stream through a fresh SessionView reproduces the
 * identical state (and therefore the identical rendered view).
 */

import {
  Command,
  EventMsg,
  HelloMsg,
  ServerMsg,
  TelemetryMsg,
  describeCommand,
  expectedAck,
} from './protocol';

export type ConnectionState =
  | 'disconnected'
  | 'connecting'
  | 'connected'
  | 'reconnecting';

export interface FeedEntry {
  t: number;
  s: number;
  kind: 'event' | 'coast' | 'error';
  text: string;
}

export interface PendingCommand {
  label: string;
  acks: string[];
  error: string | null;
}

export interface LapRow {
  lap: number;
  t_lap: number;
  E_used: number;
}

export const HISTORY_LIMIT = 10000;
const FEED_LIMIT = 200;

export class SessionView {
  state: ConnectionState = 'disconnected';
  hello: HelloMsg | null = null;
  frame: TelemetryMsg | null = null;
  history: TelemetryMsg[] = [];
  feed: FeedEntry[] = [];
  pending: PendingCommand[] = [];
  laps: LapRow[] = [];
  framesSeen = 0;

  private lapStart: { lap: number; t: number; E_b: number } | null = null;

  constructor(readonly historyLimit: number = HISTORY_LIMIT) {}

  setState(state: ConnectionState): void {
    this.state = state;
  }

  get connected(): boolean {
    return this.state === 'connected';
  }

  applyMessage(msg: ServerMsg): void {
    switch (msg.type) {
      case 'hello':
        this.applyHello(msg);
        break;
      case 'telemetry':
        this.applyFrame(msg);
        break;
      case 'event':
        this.applyEvent(msg);
        break;
      case 'error':
        this.applyError(msg.message);
        break;
    }
  }

  /** Record an outbound command as pending until the server acknowledges. */
  noteSent(cmd: Command): void {
    this.pending.push({
      label: describeCommand(cmd),
      acks: expectedAck(cmd),
      error: null,
    });
  }

  private applyHello(msg: HelloMsg): void {
    // a fresh hello is a fresh session: drop everything derived
    this.hello = msg;
    this.frame = null;
    this.history = [];
    this.feed = [];
    this.pending = [];
    this.laps = [];
    this.framesSeen = 0;
    this.lapStart = null;
  }

  private applyFrame(msg: TelemetryMsg): void {
    const prev = this.frame;
    this.frame = msg;
    this.framesSeen += 1;
    this.history.push(msg);
    if (this.history.length > this.historyLimit) {
      this.history.splice(0, this.history.length - this.historyLimit);
    }
    // the coast light is the central element: every transition goes to the
    // feed so none can be dropped between renders
    if (!prev || prev.coast !== msg.coast) {
      this.pushFeed({
        t: msg.t,
        s: msg.s,
        kind: 'coast',
        text: msg.coast ? 'coast ON' : 'coast OFF',
      });
    }
    if (!this.lapStart) {
      this.lapStart = { lap: msg.lap, t: msg.t, E_b: msg.E_b };
    } else if (msg.lap > this.lapStart.lap) {
      this.laps.push({
        lap: this.lapStart.lap,
        t_lap: msg.t - this.lapStart.t,
        E_used: this.lapStart.E_b - msg.E_b,
      });
      this.lapStart = { lap: msg.lap, t: msg.t, E_b: msg.E_b };
    }
    // close the partial last lap, unless the stint ended exactly on the
    // lap boundary that the branch above already accounted for
    if (msg.done && this.lapStart && msg.lap === this.lapStart.lap
        && msg.t > this.lapStart.t) {
      this.laps.push({
        lap: this.lapStart.lap,
        t_lap: msg.t - this.lapStart.t,
        E_used: this.lapStart.E_b - msg.E_b,
      });
      this.lapStart = { lap: msg.lap + 1, t: msg.t, E_b: msg.E_b };
    }
  }

  private applyEvent(msg: EventMsg): void {
    // acknowledge the oldest command still waiting on this event name;
    // rejected ones stay visible with their error until the next hello
    const i = this.pending.findIndex(
      (p) => p.error === null && p.acks.includes(msg.event));
    if (i >= 0) {
      this.pending.splice(i, 1);
    }
    this.pushFeed({
      t: msg.t,
      s: msg.s,
      kind: 'event',
      text: formatEvent(msg),
    });
  }

  private applyError(message: string): void {
    // commands are applied in order, so an error belongs to the oldest
    // still-unacknowledged command; keep it visible inline
    const head = this.pending.find((p) => p.error === null);
    if (head) {
      head.error = message;
    }
    this.pushFeed({
      t: this.frame?.t ?? 0,
      s: this.frame?.s ?? 0,
      kind: 'error',
      text: message,
    });
  }

  private pushFeed(entry: FeedEntry): void {
    this.feed.push(entry);
    if (this.feed.length > FEED_LIMIT) {
      this.feed.splice(0, this.feed.length - FEED_LIMIT);
    }
  }

  /** Everything the renderer reads, serialized for replay comparisons. */
  snapshot(): string {
    return JSON.stringify({
      state: this.state,
      hello: this.hello,
      frame: this.frame,
      history: this.history,
      feed: this.feed,
      pending: this.pending,
      laps: this.laps,
      framesSeen: this.framesSeen,
    });
  }
}

function formatEvent(msg: EventMsg): string {
  const extras = Object.entries(msg)
    .filter(([k]) => !['type', 'event', 's', 't'].includes(k))
    .map(([k, v]) => `${k}=${typeof v === 'number' ? shortNum(v) : String(v)}`)
    .join(' ');
  return extras ? `${msg.event} ${extras}` : msg.event;
}

function shortNum(x: number): string {
  if (x === 0) return '0';
  const a = Math.abs(x);
  if (a >= 1e5 || a < 1e-3) return x.toExponential(3);
  return String(Math.round(x * 1000) / 1000);
}
