// The fixture is a JSONL recording of one real server session (hello,
// paced telemetry, command acknowledgements, one rejected command).
// Every line must parse strictly, and folding the stream into a
// SessionView must not throw or drop messages.

import { readFileSync } from 'node:fs';
import { dirname, join } from 'node:path';
import { fileURLToPath } from 'node:url';

import { describe, expect, it } from 'vitest';

import { parseServerMessage } from '../src/protocol';
import { SessionView } from '../src/session';

const here = dirname(fileURLToPath(import.meta.url));

function lines(): string[] {
  const raw = readFileSync(join(here, 'fixtures', 'wire_messages.jsonl'), 'utf8');
  return raw.split('\n').filter((l) => l.length > 0);
}

describe('recorded server stream', () => {
  it('every line parses as a known message type', () => {
    const counts = new Map<string, number>();
    for (const line of lines()) {
      const msg = parseServerMessage(line);
      expect(msg, line.slice(0, 120)).not.toBeNull();
      counts.set(msg!.type, (counts.get(msg!.type) ?? 0) + 1);
    }
    expect(counts.get('hello')).toBe(1);
    expect(counts.get('telemetry')! > 100).toBe(true);
    expect(counts.get('event')! >= 7).toBe(true);
    expect(counts.get('error')).toBe(1);
  });

  it('folds into a session view ending with the completed stint', () => {
    const view = new SessionView();
    view.setState('connected');
    let frames = 0;
    for (const line of lines()) {
      const msg = parseServerMessage(line)!;
      if (msg.type === 'telemetry') frames += 1;
      view.applyMessage(msg);
    }
    expect(view.framesSeen).toBe(frames);
    expect(view.frame!.done).toBe(true);
    expect(view.laps.length).toBe(2);
    const kinds = view.feed.map((e) => e.text.split(' ')[0]);
    expect(kinds).toContain('scenario_triggered');
    expect(kinds).toContain('stint_complete');
  });
});
