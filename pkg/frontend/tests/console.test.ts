// DOM-level checks: the coast light's latency, one schema-valid command
// per engineer action, silence while disconnected, and live-vs-replay
// render identity.

import { describe, expect, it } from 'vitest';

import { PowerRing } from '../src/charts';
import { Connection } from '../src/connection';
import { ServerMsg, validateCommand } from '../src/protocol';
import { buildConsole, renderConsole, wireDriver, wireEngineer } from '../src/panels';
import { SessionView } from '../src/session';
import { MockSocket, makeEvent, makeFrame, makeHello } from './helpers';

function mount() {
  document.body.innerHTML = '<div id="root"></div>';
  const root = document.getElementById('root') as HTMLElement;
  const els = buildConsole(root);
  const view = new SessionView();
  const ring = new PowerRing();
  const sockets: MockSocket[] = [];
  const conn = new Connection('ws://test', view, {
    factory: () => {
      const s = new MockSocket();
      sockets.push(s);
      return s;
    },
    schedule: (cb) => cb(),
    timer: () => {},
    onRender: () => renderConsole(view, els, ring),
  });
  return { root, els, view, ring, conn, sockets };
}

describe('driver panel', () => {
  it('turns the coast light on within 50 ms of frame receipt', () => {
    const { els, conn, sockets } = mount();
    conn.connect();
    sockets[0].open();
    sockets[0].receive(makeHello());
    sockets[0].receive(makeFrame(0, { coast: false }));
    expect(els.coastLight.className).toBe('coast-light off');

    const t0 = performance.now();
    sockets[0].receive(makeFrame(1, { coast: true, coast_signal: true }));
    const lit = els.coastLight.className === 'coast-light on';
    const elapsed = performance.now() - t0;
    expect(lit).toBe(true);
    expect(elapsed).toBeLessThan(50);

    sockets[0].receive(makeFrame(2, { coast: false }));
    expect(els.coastLight.className).toBe('coast-light off');
  });

  it('shows grip state, active map and gauges from the frame', () => {
    const { els, conn, sockets } = mount();
    conn.connect();
    sockets[0].open();
    sockets[0].receive(makeHello());
    sockets[0].receive(makeFrame(5, { grip_limited: true, map: 2, v: 51.234 }));
    expect(els.gripChip.textContent).toBe('grip limited');
    expect(els.mapChip.textContent).toBe('map 2');
    expect(els.speedValue.textContent).toBe('51.2 m/s');
    expect(els.mapSelect.options.length).toBe(3);
  });

  it('keyboard throttle: press sends 1, release sends 0, hold does not repeat', () => {
    const { els, conn, sockets } = mount();
    conn.connect();
    sockets[0].open();
    wireDriver(els, (cmd) => conn.send(cmd));
    const down = new KeyboardEvent('keydown', { code: 'Space' });
    const up = new KeyboardEvent('keyup', { code: 'Space' });
    window.dispatchEvent(down);
    window.dispatchEvent(down); // auto-repeat while held
    window.dispatchEvent(up);
    expect(sockets[0].sent).toHaveLength(2);
    const [press, release] = sockets[0].sent.map((s) => JSON.parse(s));
    expect(press).toEqual({ type: 'command', driver_override: 'throttle', value: 1 });
    expect(release).toEqual({ type: 'command', driver_override: 'throttle', value: 0 });
  });
});

describe('engineer panel', () => {
  function clickAll(els: ReturnType<typeof mount>['els']) {
    const actions: Array<() => void> = [
      () => els.triggerButtons.get('drafting')!.click(),
      () => els.triggerButtons.get('fcy')!.click(),
      () => els.triggerButtons.get('degradation')!.click(),
      () => els.pauseButton.click(),
      () => els.resetButton.click(),
      () => {
        els.variantSelect.value = 'fully_online';
        els.variantSelect.dispatchEvent(new Event('change'));
      },
      () => {
        els.mapSelect.value = '2';
        els.mapSelect.dispatchEvent(new Event('change'));
      },
    ];
    return actions;
  }

  it('emits exactly one schema-valid command per action', () => {
    const { els, conn, sockets } = mount();
    conn.connect();
    sockets[0].open();
    sockets[0].receive(makeHello()); // populates the map select
    wireEngineer(els, (cmd) => conn.send(cmd));
    const actions = clickAll(els);
    for (const [i, act] of actions.entries()) {
      act();
      expect(sockets[0].sent, `action ${i}`).toHaveLength(i + 1);
      const wire = JSON.parse(sockets[0].sent[i]);
      expect(validateCommand(wire), `action ${i}`).toBeNull();
    }
    expect(JSON.parse(sockets[0].sent[1])).toEqual({ type: 'command', trigger: 'fcy' });
    expect(JSON.parse(sockets[0].sent[6])).toEqual({ type: 'command', set_map: 2 });
  });

  it('emits nothing while disconnected and renders the offline state', () => {
    const { els, conn, sockets } = mount();
    conn.connect();
    sockets[0].open();
    sockets[0].receive(makeHello());
    wireEngineer(els, (cmd) => conn.send(cmd));
    sockets[0].drop();
    expect(els.status.textContent).toBe('reconnecting');
    for (const act of clickAll(els)) act();
    expect(sockets[0].sent).toHaveLength(0);
  });

  it('renders a rejected command inline with the server message', () => {
    const { els, conn, sockets } = mount();
    conn.connect();
    sockets[0].open();
    sockets[0].receive(makeHello());
    wireEngineer(els, (cmd) => conn.send(cmd));
    els.triggerButtons.get('fcy')!.click();
    expect(els.pendingList.textContent).toContain('trigger fcy');
    sockets[0].receive({ type: 'error', message: 'no full lap left for a course yellow' });
    expect(els.pendingList.textContent).toContain('no full lap left');
  });
});

describe('replay identity', () => {
  function stream(): ServerMsg[] {
    const msgs: ServerMsg[] = [makeHello()];
    for (let i = 0; i < 1000; i++) {
      msgs.push(makeFrame(i, {
        coast: i % 13 < 5,
        coast_signal: i % 13 < 6,
        cap_active: i >= 410 && i < 820,
        paused: false,
      }));
      if (i % 250 === 100) msgs.push(makeEvent('plan_updated', { lambda_star: -6e-7 }));
    }
    msgs.push(makeEvent('stint_complete', { t_stint: 250, E_b: 1.3e8, violations: [] }));
    return msgs;
  }

  it('a recorded 1000-frame stream renders the same view as live playback', () => {
    const live = mount();
    live.conn.connect();
    live.sockets[0].open();
    for (const msg of stream()) live.sockets[0].receive(msg);

    const replay = mount();
    replay.view.setState('connected');
    for (const msg of stream()) replay.view.applyMessage(msg);
    renderConsole(replay.view, replay.els, replay.ring);

    expect(replay.view.snapshot()).toBe(live.view.snapshot());
    expect(replay.root.innerHTML).toBe(live.root.innerHTML);
  });
});
