// Browser entry point: connect form, canvas render loop, keyboard/gamepad
// capture, fixed-rate control sender.

import { DriveClient } from "./client";
import type { SessionInfo } from "./client";
import { SendRateLimiter, gamepadControls, keyboardStep } from "./input";
import type { ControlState, Held } from "./input";
import { PoseBuffer } from "./interpolate";
import { buildHud, pushToast } from "./hud";
import type { Toast } from "./hud";
import { renderFrame } from "./render";
import type { RenderModel, ViewMode } from "./render";
import type { EventMessage, LightView, OtherVehicle, StateMessage } from "./protocol";

function el<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

const canvas = el<HTMLCanvasElement>("view");
const ctx = canvas.getContext("2d")!;

const held: Held = { left: false, right: false, up: false, down: false };
let controls: ControlState = { steer: 0, throttle: 0, brake: 0 };
let useGamepad = false;

window.addEventListener("keydown", (e) => setKey(e.key, true));
window.addEventListener("keyup", (e) => setKey(e.key, false));

function setKey(key: string, down: boolean) {
  if (key === "ArrowLeft") held.left = down;
  else if (key === "ArrowRight") held.right = down;
  else if (key === "ArrowUp") held.up = down;
  else if (key === "ArrowDown") held.down = down;
}

window.addEventListener("gamepadconnected", () => { useGamepad = true; });
window.addEventListener("gamepaddisconnected", () => {
  useGamepad = false;
  controls = { steer: 0, throttle: 0, brake: 0 }; // device loss: release all
});

async function start() {
  const host = location.hostname || "127.0.0.1";
  const wsPort = el<HTMLInputElement>("ws-port").value || "8701";
  const vehicle = el<HTMLInputElement>("vehicle").value || "car1";
  const backend = el<HTMLSelectElement>("backend").value as "sim" | "mock_physical";
  const view = el<HTMLSelectElement>("view-mode").value as ViewMode;
  const sendRate = 50;

  const client = new DriveClient(
    {
      wsUrl: `ws://${host}:${wsPort}`,
      httpUrl: "",
      scenarioRef: "default",
      vehicleId: vehicle,
      backend,
      driverLabel: el<HTMLInputElement>("driver").value || "anonymous",
      orderIndex: Number(el<HTMLInputElement>("order").value || "0"),
      sendRateHz: sendRate,
      clientKind: "browser",
    },
    (url) => new WebSocket(url) as unknown as
      import("./client").WebSocketLike,
    async (url) => (await fetch(url)).text(),
  );

  const poses = new PoseBuffer();
  let latest: StateMessage | null = null;
  let others: OtherVehicle[] = [];
  let lights: LightView[] = [];
  let toasts: Toast[] = [];
  const sessionStart = performance.now() / 1000;

  client.onState = (s) => {
    latest = s;
    others = s.others;
    lights = s.lights;
    poses.push({ recvT: performance.now() / 1000, x: s.ego.x, y: s.ego.y,
                 theta: s.ego.theta, v: s.ego.v });
  };
  client.onEvent = (e) => {
    toasts = pushToast(toasts, e as EventMessage, performance.now() / 1000);
  };

  let info: SessionInfo;
  try {
    info = await client.connectAndHandshake();
  } catch (err) {
    el<HTMLDivElement>("status").textContent = `connection failed: ${err}`;
    return;
  }
  el<HTMLDivElement>("status").textContent =
    `session ${info.sessionId} on ${info.map.name}`;

  const limiter = new SendRateLimiter(sendRate);
  let lastSample = performance.now();
  setInterval(() => {
    const now = performance.now();
    const dt = (now - lastSample) / 1000;
    lastSample = now;
    if (useGamepad) {
      const pads = navigator.getGamepads?.() ?? [];
      const pad = pads.find((p) => p);
      if (pad) controls = gamepadControls(pad.axes);
    } else {
      controls = keyboardStep(controls, held, dt);
    }
    if (limiter.allow(now)) {
      client.sendControl(controls.steer, controls.throttle, controls.brake);
    }
  }, 1000 / sendRate);

  function frame() {
    const now = performance.now() / 1000;
    const ego = poses.sample(now);
    const model: RenderModel = {
      map: info.map,
      ego,
      others,
      lights,
      hud: buildHud(latest, sessionStart, now, toasts, ego?.stale ?? false),
      view,
    };
    renderFrame(ctx, model, canvas.width, canvas.height);
    requestAnimationFrame(frame);
  }
  requestAnimationFrame(frame);
}

el<HTMLButtonElement>("connect").addEventListener("click", () => { void start(); });
