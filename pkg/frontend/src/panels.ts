/**
 * DOM for the two panels and the pure render pass.
 *
 * `buildConsole` creates the element tree once; `renderConsole` writes it
 * from a SessionView, nothing else.  Event wiring lives in `wireEngineer`
 * and `wireDriver`: every user action maps to exactly one command handed
 * to the dispatch callback.
 */

import { PowerRing, drawCostate, drawGauge, drawTrackRing } from './charts';
import { Command, TRIGGERS, VARIANTS, commands } from './protocol';
import { SessionView } from './session';

export interface ConsoleEls {
  root: HTMLElement;
  status: HTMLElement;
  coastLight: HTMLElement;
  throttleState: HTMLElement;
  gripChip: HTMLElement;
  capChip: HTMLElement;
  mapChip: HTMLElement;
  speedValue: HTMLElement;
  speedGauge: HTMLCanvasElement;
  energyValue: HTMLElement;
  energyGauge: HTMLCanvasElement;
  thetaM: HTMLElement;
  thetaB: HTMLElement;
  lapValue: HTMLElement;
  timeValue: HTMLElement;
  variantSelect: HTMLSelectElement;
  mapSelect: HTMLSelectElement;
  triggerButtons: Map<string, HTMLButtonElement>;
  pauseButton: HTMLButtonElement;
  resetButton: HTMLButtonElement;
  coastAckButton: HTMLButtonElement;
  costateCanvas: HTMLCanvasElement;
  ringCanvas: HTMLCanvasElement;
  lapTableBody: HTMLElement;
  feedList: HTMLElement;
  pendingList: HTMLElement;
  configHash: HTMLElement;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  id?: string,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (id) node.id = id;
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function canvas(id: string, w: number, h: number): HTMLCanvasElement {
  const c = el('canvas', id);
  c.width = w;
  c.height = h;
  return c;
}

export function buildConsole(root: HTMLElement): ConsoleEls {
  root.innerHTML = '';

  const header = el('div', 'header', 'header');
  const status = el('span', 'status', 'status disconnected', 'disconnected');
  const configHash = el('span', 'config-hash', 'config-hash', '');
  header.append(el('span', undefined, 'title', 'stint console'), status, configHash);

  const driver = el('section', 'driver-panel', 'panel driver');
  const coastLight = el('div', 'coast-light', 'coast-light off', 'COAST');
  const throttleState = el('div', 'throttle-state', 'chip', 'throttle -');
  const gripChip = el('div', 'grip-chip', 'chip', 'grip ok');
  const capChip = el('div', 'cap-chip', 'chip', '');
  const mapChip = el('div', 'map-chip', 'chip', 'map -');
  const speedValue = el('div', 'speed-value', 'readout', '- m/s');
  const speedGauge = canvas('speed-gauge', 220, 14);
  const energyValue = el('div', 'energy-value', 'readout', '- MJ');
  const energyGauge = canvas('energy-gauge', 220, 14);
  const thetaM = el('div', 'theta-m', 'readout small', 'motor - K');
  const thetaB = el('div', 'theta-b', 'readout small', 'battery - K');
  const lapValue = el('div', 'lap-value', 'readout small', 'lap -');
  const timeValue = el('div', 'time-value', 'readout small', 't -');
  const coastAckButton = el('button', 'coast-ack', 'action', 'acknowledge coast');
  driver.append(
    coastLight, throttleState,
    el('div', undefined, 'chip-row'),
    gripChip, capChip, mapChip,
    speedValue, speedGauge, energyValue, energyGauge,
    thetaM, thetaB, lapValue, timeValue, coastAckButton,
  );

  const engineer = el('section', 'engineer-panel', 'panel engineer');
  const variantSelect = el('select', 'variant-select') as HTMLSelectElement;
  for (const v of VARIANTS) {
    const opt = el('option', undefined, undefined, v) as HTMLOptionElement;
    opt.value = v;
    variantSelect.append(opt);
  }
  const mapSelect = el('select', 'map-select') as HTMLSelectElement;
  const triggerButtons = new Map<string, HTMLButtonElement>();
  const triggerRow = el('div', 'trigger-row', 'button-row');
  for (const name of TRIGGERS) {
    const b = el('button', `trigger-${name}`, 'action', name) as HTMLButtonElement;
    triggerButtons.set(name, b);
    triggerRow.append(b);
  }
  const pauseButton = el('button', 'pause-button', 'action', 'pause') as HTMLButtonElement;
  const resetButton = el('button', 'reset-button', 'action', 'reset') as HTMLButtonElement;
  const costateCanvas = canvas('costate-chart', 560, 160);
  const ringCanvas = canvas('track-ring', 220, 220);
  const lapTable = el('table', 'lap-table');
  const lapHead = el('thead');
  const headRow = el('tr');
  for (const h of ['lap', 't [s]', 'E used [MJ]']) {
    headRow.append(el('th', undefined, undefined, h));
  }
  lapHead.append(headRow);
  const lapTableBody = el('tbody', 'lap-table-body');
  lapTable.append(lapHead, lapTableBody);
  const feedList = el('ul', 'event-feed', 'feed');
  const pendingList = el('ul', 'pending-commands', 'pending');
  engineer.append(
    el('label', undefined, undefined, 'variant'), variantSelect,
    el('label', undefined, undefined, 'map'), mapSelect,
    triggerRow, pauseButton, resetButton,
    costateCanvas, ringCanvas, lapTable, pendingList, feedList,
  );

  root.append(header, driver, engineer);
  return {
    root, status, coastLight, throttleState, gripChip, capChip, mapChip,
    speedValue, speedGauge, energyValue, energyGauge, thetaM, thetaB,
    lapValue, timeValue, variantSelect, mapSelect, triggerButtons,
    pauseButton, resetButton, coastAckButton, costateCanvas, ringCanvas,
    lapTableBody, feedList, pendingList, configHash,
  };
}

const V_GAUGE_MAX = 95; // [m/s] display ceiling, just above any straight cap

export function renderConsole(view: SessionView, els: ConsoleEls, ring: PowerRing): void {
  els.status.textContent = view.state;
  els.status.className = `status ${view.state}`;

  const hello = view.hello;
  els.configHash.textContent = hello ? `cfg ${hello.config_hash}` : '';
  if (hello && els.mapSelect.options.length !== hello.maps.length) {
    els.mapSelect.innerHTML = '';
    for (const m of hello.maps) {
      const opt = document.createElement('option');
      opt.value = String(m.id);
      opt.textContent = `map ${m.id} (${Math.round(m.P_full / 1000)} kW)`;
      els.mapSelect.append(opt);
    }
  }

  const f = view.frame;
  els.coastLight.className = `coast-light ${f && f.coast ? 'on' : 'off'}`;
  if (f) {
    const throttle = f.driver === 'external'
      ? (f.coast || f.driver_coast ? 'lifted' : 'full')
      : (f.coast_signal ? 'signal: lift' : 'full');
    els.throttleState.textContent =
      `throttle ${throttle}${f.driver === 'external' ? ' (driver)' : ''}`;
    els.gripChip.textContent = f.grip_limited ? 'grip limited' : 'grip ok';
    els.gripChip.className = `chip ${f.grip_limited ? 'warn' : ''}`;
    els.capChip.textContent = f.cap_active ? 'speed capped' : '';
    els.mapChip.textContent = `map ${f.map}`;
    els.speedValue.textContent = `${f.v.toFixed(1)} m/s`;
    els.energyValue.textContent = `${(f.E_b / 1e6).toFixed(1)} MJ`;
    els.thetaM.textContent = `motor ${f.theta_m.toFixed(1)} K`;
    els.thetaB.textContent = `battery ${f.theta_b.toFixed(1)} K`;
    els.lapValue.textContent =
      `lap ${f.lap}${hello ? ` / ${hello.n_laps}` : ''}${f.done ? ' - complete' : ''}`;
    els.timeValue.textContent = `t ${f.t.toFixed(1)} s  ${f.scenario}`;
    els.pauseButton.textContent = f.paused ? 'resume' : 'pause';
    if (els.variantSelect.value !== f.variant) els.variantSelect.value = f.variant;
    if (els.mapSelect.value !== String(f.map)) els.mapSelect.value = String(f.map);
    drawGauge(els.speedGauge, f.v / V_GAUGE_MAX, '#6fd08c');
    if (hello) {
      drawGauge(els.energyGauge, f.E_b / hello.E_b_max, '#5aa9e6',
                hello.E_b_target / hello.E_b_max);
      drawCostate(els.costateCanvas, hello, f);
      drawTrackRing(els.ringCanvas, ring, f, hello.s_lap, 250e3);
    }
  }

  els.lapTableBody.innerHTML = '';
  for (const row of view.laps) {
    const tr = document.createElement('tr');
    for (const cell of [String(row.lap), row.t_lap.toFixed(1),
                        (row.E_used / 1e6).toFixed(2)]) {
      const td = document.createElement('td');
      td.textContent = cell;
      tr.append(td);
    }
    els.lapTableBody.append(tr);
  }

  els.feedList.innerHTML = '';
  for (const entry of view.feed.slice(-30).reverse()) {
    const li = document.createElement('li');
    li.className = `feed-${entry.kind}`;
    li.textContent = `[t=${entry.t.toFixed(1)}] ${entry.text}`;
    els.feedList.append(li);
  }

  els.pendingList.innerHTML = '';
  for (const p of view.pending) {
    const li = document.createElement('li');
    li.className = p.error === null ? 'pending-wait' : 'pending-error';
    li.textContent = p.error === null ? `${p.label} …` : `${p.label}: ${p.error}`;
    els.pendingList.append(li);
  }
}

export type Dispatch = (cmd: Command) => void;

/** Engineer controls: one command per user action. */
export function wireEngineer(els: ConsoleEls, dispatch: Dispatch): void {
  els.variantSelect.addEventListener('change', () => {
    dispatch(commands.setVariant(els.variantSelect.value));
  });
  els.mapSelect.addEventListener('change', () => {
    dispatch(commands.setMap(Number(els.mapSelect.value)));
  });
  for (const [name, button] of els.triggerButtons) {
    button.addEventListener('click', () => dispatch(commands.trigger(name)));
  }
  els.pauseButton.addEventListener('click', () => {
    dispatch(commands.pause(els.pauseButton.textContent !== 'resume'));
  });
  els.resetButton.addEventListener('click', () => dispatch(commands.reset()));
}

/**
 * Driver inputs: space bar is a binary throttle (hold = full, release =
 * coast), the button acknowledges the current coast instruction.
 */
export function wireDriver(
  els: ConsoleEls,
  dispatch: Dispatch,
  target: { addEventListener: typeof window.addEventListener } = window,
): void {
  let held = false;
  target.addEventListener('keydown', (ev) => {
    const e = ev as KeyboardEvent;
    if (e.code !== 'Space' || held) return;
    held = true;
    dispatch(commands.throttle(1));
  });
  target.addEventListener('keyup', (ev) => {
    const e = ev as KeyboardEvent;
    if (e.code !== 'Space') return;
    held = false;
    dispatch(commands.throttle(0));
  });
  els.coastAckButton.addEventListener('click', () => dispatch(commands.coastAck()));
}
