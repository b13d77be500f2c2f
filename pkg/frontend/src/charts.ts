/**
 * Canvas drawing.  Everything here is rendered purely from received
 * telemetry: the co-state trace comes from the hello message, the live
 * threshold and car position from the latest frame, and the lap ring is
 * colored by the battery power measured the last time the car passed
 * each segment.  In test environments without a 2D context these are
 * silent no-ops; state and DOM stay authoritative.
 */

import { HelloMsg, TelemetryMsg } from './protocol';

const COLOR_TRACE = '#7fb4ff';
const COLOR_THRESHOLD = '#ff9f43';
const COLOR_CAR = '#ffffff';
const COLOR_GRID = '#2a3550';

function ctx2d(canvas: HTMLCanvasElement): CanvasRenderingContext2D | null {
  try {
    return canvas.getContext('2d');
  } catch {
    return null;
  }
}

/**
 * Co-state field over one lap with the live adjusted threshold overlaid;
 * nodes above the line are coast instructions. A vertical cursor marks
 * the car.
 */
export function drawCostate(
  canvas: HTMLCanvasElement,
  hello: HelloMsg,
  frame: TelemetryMsg | null,
): void {
  const ctx = ctx2d(canvas);
  if (!ctx) return;
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);

  const lapPoints = hello.costate.filter(([s]) => s <= hello.s_lap);
  if (lapPoints.length < 2) return;
  const values = lapPoints.map(([, lam]) => lam);
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  const threshold = frame ? frame.lambda_star_adj : hello.lambda_star;
  lo = Math.min(lo, threshold);
  hi = Math.max(hi, threshold);
  const pad = 0.1 * (hi - lo || 1);
  lo -= pad;
  hi += pad;
  const x = (s: number) => (s / hello.s_lap) * w;
  const y = (lam: number) => h - ((lam - lo) / (hi - lo)) * h;

  ctx.strokeStyle = COLOR_GRID;
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(0, y(0));
  ctx.lineTo(w, y(0));
  ctx.stroke();

  ctx.strokeStyle = COLOR_TRACE;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  lapPoints.forEach(([s, lam], i) => {
    if (i === 0) ctx.moveTo(x(s), y(lam));
    else ctx.lineTo(x(s), y(lam));
  });
  ctx.stroke();

  ctx.strokeStyle = COLOR_THRESHOLD;
  ctx.setLineDash([6, 4]);
  ctx.beginPath();
  ctx.moveTo(0, y(threshold));
  ctx.lineTo(w, y(threshold));
  ctx.stroke();
  ctx.setLineDash([]);

  if (frame) {
    const sLap = frame.s % hello.s_lap;
    ctx.strokeStyle = COLOR_CAR;
    ctx.globalAlpha = 0.7;
    ctx.beginPath();
    ctx.moveTo(x(sLap), 0);
    ctx.lineTo(x(sLap), h);
    ctx.stroke();
    ctx.globalAlpha = 1;
  }
}

/** Rolling per-segment battery power [W] around the lap. */
export class PowerRing {
  readonly segments: number;
  readonly power: Float64Array;
  private last: { s: number; t: number; E_b: number } | null = null;

  constructor(segments = 120) {
    this.segments = segments;
    this.power = new Float64Array(segments);
  }

  update(frame: TelemetryMsg, sLap: number): void {
    if (this.last && frame.t > this.last.t) {
      const p = (this.last.E_b - frame.E_b) / (frame.t - this.last.t);
      const idx = Math.floor(((this.last.s % sLap) / sLap) * this.segments);
      this.power[Math.max(0, Math.min(this.segments - 1, idx))] = p;
    }
    this.last = { s: frame.s, t: frame.t, E_b: frame.E_b };
  }

  reset(): void {
    this.power.fill(0);
    this.last = null;
  }
}

/** Schematic lap ring colored by the power ring, car dot at its s. */
export function drawTrackRing(
  canvas: HTMLCanvasElement,
  ring: PowerRing,
  frame: TelemetryMsg | null,
  sLap: number,
  pMax: number,
): void {
  const ctx = ctx2d(canvas);
  if (!ctx) return;
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const cx = w / 2;
  const cy = h / 2;
  const r = Math.min(w, h) / 2 - 12;
  const step = (2 * Math.PI) / ring.segments;
  for (let i = 0; i < ring.segments; i++) {
    const a0 = -Math.PI / 2 + i * step;
    const frac = Math.max(-1, Math.min(1, ring.power[i] / pMax));
    // discharge in warm tones, regen in cool ones
    ctx.strokeStyle = frac >= 0
      ? `rgb(${80 + Math.round(175 * frac)}, ${90 - Math.round(40 * frac)}, 80)`
      : `rgb(80, ${90 + Math.round(80 * -frac)}, ${120 + Math.round(135 * -frac)})`;
    ctx.lineWidth = 10;
    ctx.beginPath();
    ctx.arc(cx, cy, r, a0, a0 + step + 0.01);
    ctx.stroke();
  }
  if (frame) {
    const a = -Math.PI / 2 + ((frame.s % sLap) / sLap) * 2 * Math.PI;
    ctx.fillStyle = COLOR_CAR;
    ctx.beginPath();
    ctx.arc(cx + r * Math.cos(a), cy + r * Math.sin(a), 6, 0, 2 * Math.PI);
    ctx.fill();
  }
}

/** Horizontal bar gauge with a tick at an optional target fraction. */
export function drawGauge(
  canvas: HTMLCanvasElement,
  frac: number,
  color: string,
  targetFrac?: number,
): void {
  const ctx = ctx2d(canvas);
  if (!ctx) return;
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  ctx.fillStyle = COLOR_GRID;
  ctx.fillRect(0, 0, w, h);
  ctx.fillStyle = color;
  ctx.fillRect(0, 0, Math.max(0, Math.min(1, frac)) * w, h);
  if (targetFrac !== undefined) {
    ctx.fillStyle = COLOR_CAR;
    ctx.fillRect(Math.max(0, Math.min(1, targetFrac)) * w - 1, 0, 2, h);
  }
}
