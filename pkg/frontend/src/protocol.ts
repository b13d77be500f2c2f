/**
 * Wire protocol: JSON-lines over one WebSocket, `type` field mandatory.
 *
 * Server to console: hello, telemetry, event, error.
 * Console to server: command, with exactly one action field out of
 * set_variant / trigger / set_map / driver_override / pause / reset.
 */

export interface ThrottleMapInfo {
  id: number;
  P_full: number;
}

export interface HelloMsg {
  type: 'hello';
  config_hash: string;
  s_lap: number;
  S_stint: number;
  n_laps: number;
  E_b_max: number;
  theta_m_max: number;
  theta_b_max: number;
  E_b_target: number;
  maps: ThrottleMapInfo[];
  variant: string;
  scenario: string;
  timescale: number;
  costate: [number, number][]; // [s, lambda] samples of the offline field
  lambda_star: number;
}

export interface TelemetryMsg {
  type: 'telemetry';
  s: number;
  t: number;
  lap: number;
  v: number;
  E_kin: number;
  E_b: number;
  theta_m: number;
  theta_b: number;
  coast: boolean;
  coast_signal: boolean;
  grip_limited: boolean;
  cap_active: boolean;
  lambda_kin: number;
  lambda_star_adj: number;
  scenario: string;
  variant: string;
  map: number;
  driver: string;
  driver_coast: boolean;
  paused: boolean;
  done: boolean;
}

export interface EventMsg {
  type: 'event';
  event: string;
  s: number;
  t: number;
  [extra: string]: unknown;
}

export interface ErrorMsg {
  type: 'error';
  message: string;
}

export type ServerMsg = HelloMsg | TelemetryMsg | EventMsg | ErrorMsg;

export const COMMAND_ACTIONS = [
  'set_variant',
  'trigger',
  'set_map',
  'driver_override',
  'pause',
  'reset',
] as const;

export type CommandAction = (typeof COMMAND_ACTIONS)[number];

export interface Command {
  type: 'command';
  set_variant?: string;
  trigger?: string;
  set_map?: number;
  driver_override?: string;
  value?: number;
  pause?: boolean;
  reset?: boolean;
}

export const VARIANTS = [
  'fully_online',
  'fixed_costate',
  'fixed_costate_and_threshold',
] as const;

export const TRIGGERS = ['drafting', 'fcy', 'degradation'] as const;

function isNum(x: unknown): x is number {
  return typeof x === 'number' && Number.isFinite(x);
}

function isBool(x: unknown): x is boolean {
  return typeof x === 'boolean';
}

function isStr(x: unknown): x is string {
  return typeof x === 'string';
}

const TELEMETRY_NUMBERS = [
  's', 't', 'lap', 'v', 'E_kin', 'E_b', 'theta_m', 'theta_b',
  'lambda_kin', 'lambda_star_adj', 'map',
] as const;

const TELEMETRY_BOOLS = [
  'coast', 'coast_signal', 'grip_limited', 'cap_active', 'driver_coast',
  'paused', 'done',
] as const;

export function isTelemetry(msg: unknown): msg is TelemetryMsg {
  if (typeof msg !== 'object' || msg === null) return false;
  const m = msg as Record<string, unknown>;
  return (
    m.type === 'telemetry' &&
    TELEMETRY_NUMBERS.every((k) => isNum(m[k])) &&
    TELEMETRY_BOOLS.every((k) => isBool(m[k])) &&
    isStr(m.scenario) && isStr(m.variant) && isStr(m.driver)
  );
}

export function isHello(msg: unknown): msg is HelloMsg {
  if (typeof msg !== 'object' || msg === null) return false;
  const m = msg as Record<string, unknown>;
  return (
    m.type === 'hello' &&
    isStr(m.config_hash) && isStr(m.variant) && isStr(m.scenario) &&
    isNum(m.s_lap) && isNum(m.S_stint) && isNum(m.n_laps) &&
    isNum(m.E_b_max) && isNum(m.E_b_target) && isNum(m.timescale) &&
    isNum(m.theta_m_max) && isNum(m.theta_b_max) && isNum(m.lambda_star) &&
    Array.isArray(m.maps) &&
    m.maps.every((e) => typeof e === 'object' && e !== null &&
      isNum((e as Record<string, unknown>).id) &&
      isNum((e as Record<string, unknown>).P_full)) &&
    Array.isArray(m.costate) &&
    m.costate.every((p) => Array.isArray(p) && p.length === 2 &&
      isNum(p[0]) && isNum(p[1]))
  );
}

export function isEvent(msg: unknown): msg is EventMsg {
  if (typeof msg !== 'object' || msg === null) return false;
  const m = msg as Record<string, unknown>;
  return m.type === 'event' && isStr(m.event) && isNum(m.s) && isNum(m.t);
}

export function isError(msg: unknown): msg is ErrorMsg {
  if (typeof msg !== 'object' || msg === null) return false;
  const m = msg as Record<string, unknown>;
  return m.type === 'error' && isStr(m.message);
}

/** Parse one JSON line from the server; null for anything malformed. */
export function parseServerMessage(raw: string): ServerMsg | null {
  let obj: unknown;
  try {
    obj = JSON.parse(raw);
  } catch {
    return null;
  }
  if (isTelemetry(obj) || isHello(obj) || isEvent(obj) || isError(obj)) {
    return obj;
  }
  return null;
}

/**
 * Check an outbound command against the wire schema.  Returns null when the
 * command is valid, otherwise the reason it would be rejected.
 */
export function validateCommand(obj: unknown): string | null {
  if (typeof obj !== 'object' || obj === null) return 'not an object';
  const m = obj as Record<string, unknown>;
  if (m.type !== 'command') return "type must be 'command'";
  const actions = COMMAND_ACTIONS.filter((k) => k in m);
  if (actions.length !== 1) {
    return `exactly one action field required, got ${actions.length}`;
  }
  const action = actions[0];
  switch (action) {
    case 'set_variant':
      if (!isStr(m.set_variant)) return 'set_variant needs a string';
      break;
    case 'trigger':
      if (!isStr(m.trigger)) return 'trigger needs a string';
      break;
    case 'set_map':
      if (!isNum(m.set_map)) return 'set_map needs a number';
      break;
    case 'driver_override':
      if (m.driver_override !== 'throttle' && m.driver_override !== 'coast_ack') {
        return 'driver_override must be throttle or coast_ack';
      }
      if (m.driver_override === 'throttle' && m.value !== 0 && m.value !== 1) {
        return 'throttle override needs value 0 or 1';
      }
      break;
    case 'pause':
      if (!isBool(m.pause)) return 'pause needs a boolean';
      break;
    case 'reset':
      break;
  }
  return null;
}

/** Event names that acknowledge a command, in the server's vocabulary. */
export function expectedAck(cmd: Command): string[] {
  if (cmd.set_variant !== undefined) return ['variant_changed'];
  if (cmd.trigger !== undefined) return ['scenario_triggered'];
  if (cmd.set_map !== undefined) return ['map_changed'];
  if (cmd.driver_override !== undefined) return ['driver_override'];
  if (cmd.pause !== undefined) return ['paused', 'resumed'];
  return ['reset'];
}

export const commands = {
  setVariant(variant: string): Command {
    return { type: 'command', set_variant: variant };
  },
  setMap(id: number): Command {
    return { type: 'command', set_map: id };
  },
  trigger(name: string): Command {
    return { type: 'command', trigger: name };
  },
  throttle(value: 0 | 1): Command {
    return { type: 'command', driver_override: 'throttle', value };
  },
  coastAck(): Command {
    return { type: 'command', driver_override: 'coast_ack' };
  },
  pause(flag: boolean): Command {
    return { type: 'command', pause: flag };
  },
  reset(): Command {
    return { type: 'command', reset: true };
  },
};

/** Short human label for the pending-command list. */
export function describeCommand(cmd: Command): string {
  if (cmd.set_variant !== undefined) return `variant ${cmd.set_variant}`;
  if (cmd.trigger !== undefined) return `trigger ${cmd.trigger}`;
  if (cmd.set_map !== undefined) return `map ${cmd.set_map}`;
  if (cmd.driver_override === 'throttle') return `throttle ${cmd.value}`;
  if (cmd.driver_override !== undefined) return 'coast ack';
  if (cmd.pause !== undefined) return cmd.pause ? 'pause' : 'resume';
  return 'reset';
}
