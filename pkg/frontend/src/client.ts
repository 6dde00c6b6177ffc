// Connection + session lifecycle over a WebSocket speaking the line protocol.
// Works in the browser (native WebSocket) and under node (pass a ws-style
// constructor). The map is fetched over HTTP and validated against the
// digest announced in welcome; a mismatching cached copy is refetched once.

import { digestOfText } from "./digest";
import { MessageSender, parseServerMessage } from "./protocol";
import type { ServerMessage, StateMessage } from "./protocol";
import { parseMap } from "./mapmodel";
import type { CityMap } from "./mapmodel";

export interface WebSocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: ((err: unknown) => void) | null;
}

export interface ClientConfig {
  wsUrl: string;
  httpUrl: string;
  scenarioRef: string;
  vehicleId: string;
  backend: "sim" | "mock_physical";
  driverLabel: string;
  orderIndex: number;
  sendRateHz: number; // capped at 100
  clientKind: string;
}

export interface SessionInfo {
  sessionId: string;
  physicsRate: number;
  stateRate: number;
  mapDigest: string;
  map: CityMap;
}

type Fetcher = (url: string) => Promise<string>;

export class DriveClient {
  private sender: MessageSender | null = null;
  private ws: WebSocketLike | null = null;
  private handlers = new Map<string, Array<(msg: ServerMessage) => void>>();
  onState: ((s: StateMessage) => void) | null = null;
  onEvent: ((e: ServerMessage) => void) | null = null;

  constructor(private config: ClientConfig,
              private wsFactory: (url: string) => WebSocketLike,
              private fetchText: Fetcher,
              private mapCache: { text: string | null } = { text: null }) {
    if (config.sendRateHz > 100) {
      throw new Error("send rate must not exceed 100 Hz");
    }
  }

  private expect(type: string, timeoutMs = 5000): Promise<ServerMessage> {
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error(`timeout waiting for ${type}`)),
                               timeoutMs);
      const list = this.handlers.get(type) ?? [];
      list.push((msg) => {
        clearTimeout(timer);
        resolve(msg);
      });
      this.handlers.set(type, list);
    });
  }

  private dispatch(msg: ServerMessage) {
    if (msg.type === "state" && this.onState) this.onState(msg);
    if (msg.type === "event" && this.onEvent) this.onEvent(msg);
    const list = this.handlers.get(msg.type);
    if (list && list.length) list.shift()!(msg);
  }

  async connectAndHandshake(): Promise<SessionInfo> {
    const ws = this.wsFactory(this.config.wsUrl);
    this.ws = ws;
    await new Promise<void>((resolve, reject) => {
      ws.onopen = () => resolve();
      ws.onerror = (e) => reject(e instanceof Error ? e : new Error("connect failed"));
    });
    ws.onmessage = (ev) => {
      const msg = parseServerMessage(String(ev.data));
      if (msg) this.dispatch(msg);
    };
    this.sender = new MessageSender((line) => ws.send(line));

    this.sender.hello(this.config.clientKind);
    const welcome = await this.expect("welcome") as
      { type: "welcome"; physics_rate: number; state_rate: number; map_digest: string };

    // the server digests the canonical text without the trailing newline
    const digestOk = (txt: string | null) =>
      txt !== null && digestOfText(txt.trimEnd()) === welcome.map_digest;
    let mapText = this.mapCache.text;
    if (!digestOk(mapText)) {
      mapText = await this.fetchText(this.config.httpUrl + "/map.json");
      this.mapCache.text = mapText;
    }
    if (mapText === null || !digestOk(mapText)) {
      throw new Error(`map digest mismatch against ${welcome.map_digest}`);
    }

    this.sender.startSession(this.config.scenarioRef, this.config.vehicleId,
                             this.config.backend, this.config.driverLabel,
                             this.config.orderIndex);
    const started = await this.expect("session_started") as
      { type: "session_started"; session_id: string };
    return {
      sessionId: started.session_id,
      physicsRate: welcome.physics_rate,
      stateRate: welcome.state_rate,
      mapDigest: welcome.map_digest,
      map: parseMap(mapText),
    };
  }

  sendControl(steer: number, throttle: number, brake: number) {
    this.sender?.control(steer, throttle, brake);
  }

  async stopSession() {
    this.sender?.stopSession();
    return await this.expect("session_ended", 15000) as
      { type: "session_ended"; session_id: string; telemetry_path: string;
        metrics_summary: Record<string, unknown> };
  }

  close() {
    this.ws?.close();
  }
}
