// Headless conformance client: drives a figure eight on the served 3x3 grid
// through the real protocol, honoring the send-rate cap, then writes a JSON
// report for the orchestrating test.
//
// usage: node figure_eight.cjs <ws-url> <http-url> <report-path> [cycles]

import WebSocket from "ws";
import { writeFileSync } from "node:fs";
import { DriveClient } from "../src/client";
import type { WebSocketLike } from "../src/client";
import { SendRateLimiter } from "../src/input";
import { FIGURE_EIGHT_3X3, WaypointDriver, loopWaypoints } from "../src/scripted";
import type { StateMessage } from "../src/protocol";

const [wsUrl, httpUrl, reportPath, cyclesArg] = process.argv.slice(2);
const targetCycles = Number(cyclesArg || "2");

function wsAdapter(url: string): WebSocketLike {
  const ws = new WebSocket(url);
  return ws as unknown as WebSocketLike;
}

async function fetchText(url: string): Promise<string> {
  const res = await fetch(url);
  if (!res.ok) throw new Error(`GET ${url}: ${res.status}`);
  return await res.text();
}

async function main() {
  const client = new DriveClient(
    {
      wsUrl,
      httpUrl,
      scenarioRef: "conformance",
      vehicleId: "car1",
      backend: "sim",
      driverLabel: "scripted-figure-eight",
      orderIndex: 0,
      sendRateHz: 50,
      clientKind: "headless-script",
    },
    wsAdapter,
    fetchText,
  );

  let latest: StateMessage | null = null;
  client.onState = (s) => { latest = s; };

  const info = await client.connectAndHandshake();
  const laneWidth = info.map.segments[0].lane_width;
  const driver = new WaypointDriver(
    loopWaypoints(info.map, FIGURE_EIGHT_3X3, laneWidth), 0.45);
  const limiter = new SendRateLimiter(50);
  const sendTimes: number[] = [];

  const deadline = Date.now() + 240_000;
  await new Promise<void>((resolve, reject) => {
    const timer = setInterval(() => {
      if (driver.laps >= targetCycles || Date.now() > deadline) {
        clearInterval(timer);
        resolve();
        return;
      }
      if (!latest) return;
      const { ego } = latest;
      const out = driver.control(ego.x, ego.y, ego.theta, ego.v);
      const now = Date.now();
      if (limiter.allow(now)) {
        client.sendControl(out.steer, out.throttle, out.brake);
        sendTimes.push(now);
      }
    }, 20);
    setTimeout(() => reject(new Error("hard timeout")), 300_000);
  });

  const ended = await client.stopSession();
  client.close();

  let maxInWindow = 0;
  for (let i = 0; i < sendTimes.length; i++) {
    let j = i;
    while (j < sendTimes.length && sendTimes[j] < sendTimes[i] + 1000) j++;
    maxInWindow = Math.max(maxInWindow, j - i);
  }

  writeFileSync(reportPath, JSON.stringify({
    laps: driver.laps,
    sent: sendTimes.length,
    max_in_1s: maxInWindow,
    session_id: ended.session_id,
    telemetry_path: ended.telemetry_path,
    map_digest: info.mapDigest,
  }, null, 1));
  console.log(`figure-eight done: laps=${driver.laps} sent=${sendTimes.length} `
              + `max_1s=${maxInWindow}`);
  process.exit(driver.laps >= targetCycles ? 0 : 3);
}

main().catch((err) => {
  console.error("conformance failed:", err);
  process.exit(2);
});
