/**
 * Bootstrap: build the panels, connect, render once per pumped batch.
 *
 * The server port defaults to 8700 and can be overridden with ?port=N;
 * everything else arrives over the socket.
 */

import { PowerRing } from './charts';
import { Connection } from './connection';
import { buildConsole, renderConsole, wireDriver, wireEngineer } from './panels';
import { SessionView } from './session';

function endpoint(): string {
  const params = new URLSearchParams(window.location.search);
  const port = params.get('port') ?? '8700';
  const host = window.location.hostname || '127.0.0.1';
  return `ws://${host}:${port}`;
}

export function start(root: HTMLElement): Connection {
  const els = buildConsole(root);
  const view = new SessionView();
  const ring = new PowerRing();
  let lastFrames = 0;

  const render = () => {
    if (view.hello && view.frame && view.framesSeen !== lastFrames) {
      lastFrames = view.framesSeen;
      ring.update(view.frame, view.hello.s_lap);
    }
    renderConsole(view, els, ring);
  };

  const conn = new Connection(endpoint(), view, {
    schedule: (cb) =>
      typeof requestAnimationFrame === 'function'
        ? requestAnimationFrame(() => cb())
        : setTimeout(cb, 0),
    onRender: render,
  });
  wireEngineer(els, (cmd) => conn.send(cmd));
  wireDriver(els, (cmd) => conn.send(cmd));
  conn.connect();
  render();
  return conn;
}

if (typeof document !== 'undefined' && document.getElementById('console-root')) {
  start(document.getElementById('console-root') as HTMLElement);
}
