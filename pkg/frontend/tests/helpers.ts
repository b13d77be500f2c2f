/** Shared fixtures: synthetic wire messages and a scriptable socket. */

import { SocketLike } from '../src/connection';
import { Command, EventMsg, HelloMsg, TelemetryMsg } from '../src/protocol';

export const S_LAP = 4100;

export function makeHello(overrides: Partial<HelloMsg> = {}): HelloMsg {
  const costate: [number, number][] = [];
  for (let s = 0; s <= S_LAP; s += 50) {
    costate.push([s, -1e-6 + 5e-7 * Math.sin((2 * Math.PI * s) / S_LAP)]);
  }
  return {
    type: 'hello',
    config_hash: 'abc123def4567890',
    s_lap: S_LAP,
    S_stint: 3 * S_LAP,
    n_laps: 3,
    E_b_max: 165e6,
    theta_m_max: 400,
    theta_b_max: 330,
    E_b_target: 120e6,
    maps: [
      { id: 1, P_full: 250e3 },
      { id: 2, P_full: 245e3 },
      { id: 3, P_full: 240e3 },
    ],
    variant: 'fixed_costate',
    scenario: 'none',
    timescale: 5,
    costate,
    lambda_star: -6.2e-7,
    ...overrides,
  };
}

export function makeFrame(i: number, overrides: Partial<TelemetryMsg> = {}): TelemetryMsg {
  const s = i * 10;
  return {
    type: 'telemetry',
    s,
    t: i * 0.25,
    lap: Math.floor(s / S_LAP) + 1,
    v: 40 + 15 * Math.sin(i / 7),
    E_kin: 1e6,
    E_b: 160e6 - i * 30e3,
    theta_m: 320 + (i % 50) / 10,
    theta_b: 308 + (i % 80) / 20,
    coast: false,
    coast_signal: false,
    grip_limited: false,
    cap_active: false,
    lambda_kin: -8e-7,
    lambda_star_adj: -6.2e-7,
    scenario: 'none',
    variant: 'fixed_costate',
    map: 1,
    driver: 'automated',
    driver_coast: false,
    paused: false,
    done: false,
    ...overrides,
  };
}

export function makeEvent(name: string, extras: Record<string, unknown> = {}): EventMsg {
  return { type: 'event', event: name, s: 0, t: 0, ...extras };
}

export class MockSocket implements SocketLike {
  sent: string[] = [];
  closedByClient = false;
  onopen: (() => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closedByClient = true;
  }

  open(): void {
    this.onopen?.();
  }

  receive(msg: unknown): void {
    this.onmessage?.({ data: JSON.stringify(msg) });
  }

  drop(): void {
    this.onclose?.();
  }

  lastCommand(): Command {
    return JSON.parse(this.sent[this.sent.length - 1]) as Command;
  }
}
