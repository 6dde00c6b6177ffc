// Wire protocol: one JSON object per line/WebSocket message.
// Client->server: hello, start_session, control, stop_session, ping.
// Server->client: welcome, session_started, state, event, session_ended,
// pong, error.

export const PROTOCOL_VERSION = 1;

export interface EgoState {
  x: number;
  y: number;
  theta: number;
  v: number;
  a: number;
}

export interface OtherVehicle {
  vehicle_id: string;
  x: number;
  y: number;
  theta: number;
  v: number;
}

export interface LightView {
  light_id: string;
  phase: "green" | "amber" | "red";
  time_to_change: number;
}

export interface StateMessage {
  type: "state";
  seq: number;
  t: number;
  tick: number;
  sim_t: number;
  ego: EgoState;
  others: OtherVehicle[];
  lights: LightView[];
  hud: { lane_id: string; current_limit: number | null };
}

export interface EventMessage {
  type: "event";
  kind: string;
  tick: number;
  details: Record<string, unknown>;
}

export type ServerMessage =
  | StateMessage
  | EventMessage
  | { type: "welcome"; physics_rate: number; state_rate: number; map_digest: string }
  | { type: "session_started"; session_id: string }
  | { type: "session_ended"; session_id: string; telemetry_path: string;
      metrics_summary: Record<string, unknown> }
  | { type: "pong"; nonce: number; server_t: number }
  | { type: "error"; code: string; message: string };

export function parseServerMessage(line: string): ServerMessage | null {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null) return null;
  const type = (obj as { type?: unknown }).type;
  if (typeof type !== "string") return null;
  return obj as ServerMessage;
}

const clamp = (v: number, lo: number, hi: number) => Math.min(hi, Math.max(lo, v));

/** Outbound message factory; seq is strictly increasing per connection. */
export class MessageSender {
  private seq = 0;
  constructor(private send: (line: string) => void,
              private clock: () => number = () => performance.now() / 1000) {}

  private emit(obj: Record<string, unknown>): number {
    const seq = this.seq++;
    this.send(JSON.stringify({ ...obj, seq, t: round6(this.clock()) }));
    return seq;
  }

  hello(clientKind: string) {
    return this.emit({ type: "hello", client_kind: clientKind,
                       protocol_version: PROTOCOL_VERSION });
  }

  startSession(scenarioRef: string, vehicleId: string,
               backend: "sim" | "mock_physical", driverLabel: string,
               orderIndex: number) {
    return this.emit({
      type: "start_session", scenario_ref: scenarioRef, vehicle_id: vehicleId,
      backend, driver_label: driverLabel, order_index: orderIndex,
    });
  }

  /** Control values are clamped here so an out-of-range value never leaves
   *  the client. */
  control(steer: number, throttle: number, brake: number) {
    return this.emit({
      type: "control",
      steer: round6(clamp(steer, -1, 1)),
      throttle: round6(clamp(throttle, 0, 1)),
      brake: round6(clamp(brake, 0, 1)),
    });
  }

  stopSession() {
    return this.emit({ type: "stop_session" });
  }

  ping(nonce: number) {
    return this.emit({ type: "ping", nonce });
  }
}

export function round6(x: number): number {
  return Math.round(x * 1e6) / 1e6;
}
