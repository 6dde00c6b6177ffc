// Canvas renderer: top-down overview or chase camera. Pure geometry in,
// pixels out; all animation state lives in the caller's RenderModel.

import type { CityMap } from "./mapmodel";
import { roadWidth, segmentEndpoints, signalMarker } from "./mapmodel";
import type { HudModel } from "./hud";
import type { LightView, OtherVehicle } from "./protocol";
import type { SampledPose } from "./interpolate";

export type ViewMode = "top_down" | "chase";

export interface RenderModel {
  map: CityMap;
  ego: SampledPose | null;
  others: OtherVehicle[];
  lights: LightView[];
  hud: HudModel;
  view: ViewMode;
}

const ROAD = "#3a3f46";
const LANE_MARK = "#8a8f96";
const GRASS = "#1d2b1f";
const EGO = "#e8c34a";
const OTHER = "#7aa2d6";
const PHASE_COLOR: Record<string, string> = {
  green: "#46d46a", amber: "#e8b33c", red: "#e1504a",
};

export function renderFrame(ctx: CanvasRenderingContext2D, model: RenderModel,
                            width: number, height: number) {
  ctx.save();
  ctx.fillStyle = GRASS;
  ctx.fillRect(0, 0, width, height);
  applyCamera(ctx, model, width, height);
  drawRoads(ctx, model.map);
  drawSignals(ctx, model);
  for (const o of model.others) drawCar(ctx, o.x, o.y, o.theta, OTHER);
  if (model.ego) drawCar(ctx, model.ego.x, model.ego.y, model.ego.theta, EGO);
  ctx.restore();
  drawHud(ctx, model.hud, width, height);
}

function applyCamera(ctx: CanvasRenderingContext2D, model: RenderModel,
                     width: number, height: number) {
  const b = model.map.bounds;
  if (model.view === "top_down" || !model.ego) {
    const margin = 0.6;
    const scale = Math.min(
      width / (b.x1 - b.x0 + 2 * margin),
      height / (b.y1 - b.y0 + 2 * margin),
    );
    ctx.translate(width / 2, height / 2);
    ctx.scale(scale, -scale); // world y up
    ctx.translate(-(b.x0 + b.x1) / 2, -(b.y0 + b.y1) / 2);
  } else {
    const scale = Math.min(width, height) / 3.0; // ~3 m of world visible
    ctx.translate(width / 2, height * 0.7);
    ctx.scale(scale, -scale);
    ctx.rotate(Math.PI / 2 - model.ego.theta); // heading points up
    ctx.translate(-model.ego.x, -model.ego.y);
  }
}

function drawRoads(ctx: CanvasRenderingContext2D, map: CityMap) {
  ctx.lineCap = "round";
  for (const seg of map.segments) {
    const { a, b } = segmentEndpoints(map, seg);
    ctx.strokeStyle = ROAD;
    ctx.lineWidth = roadWidth(seg);
    ctx.beginPath();
    if (seg.geometry.kind === "straight") {
      ctx.moveTo(a.x, a.y);
      ctx.lineTo(b.x, b.y);
    } else {
      arcPath(ctx, seg.geometry, a, b);
    }
    ctx.stroke();
    // center divider
    ctx.strokeStyle = LANE_MARK;
    ctx.lineWidth = 0.01;
    ctx.setLineDash([0.08, 0.08]);
    ctx.beginPath();
    if (seg.geometry.kind === "straight") {
      ctx.moveTo(a.x, a.y);
      ctx.lineTo(b.x, b.y);
    } else {
      arcPath(ctx, seg.geometry, a, b);
    }
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

function arcPath(ctx: CanvasRenderingContext2D,
                 g: { center_x: number; center_y: number; clockwise: boolean },
                 a: { x: number; y: number }, b: { x: number; y: number }) {
  const r = Math.hypot(a.x - g.center_x, a.y - g.center_y);
  const a0 = Math.atan2(a.y - g.center_y, a.x - g.center_x);
  const a1 = Math.atan2(b.y - g.center_y, b.x - g.center_x);
  ctx.arc(g.center_x, g.center_y, r, a0, a1, g.clockwise);
}

function drawSignals(ctx: CanvasRenderingContext2D, model: RenderModel) {
  const phaseById = new Map(model.lights.map((l) => [l.light_id, l.phase]));
  for (const sig of model.map.signals) {
    const marker = signalMarker(model.map, sig);
    if (!marker) continue;
    const phase = phaseById.get(sig.id);
    ctx.fillStyle = phase ? PHASE_COLOR[phase] : "#555a60";
    ctx.beginPath();
    ctx.arc(marker.x, marker.y, 0.045, 0, 2 * Math.PI);
    ctx.fill();
  }
}

function drawCar(ctx: CanvasRenderingContext2D, x: number, y: number,
                 theta: number, color: string) {
  const L = 0.23;
  const W = 0.12;
  ctx.save();
  ctx.translate(x, y);
  ctx.rotate(theta);
  ctx.fillStyle = color;
  ctx.fillRect(-L / 2, -W / 2, L, W);
  ctx.fillStyle = "#20242a";
  ctx.fillRect(L / 2 - 0.05, -W / 2 + 0.015, 0.04, W - 0.03); // windshield
  ctx.restore();
}

function drawHud(ctx: CanvasRenderingContext2D, hud: HudModel,
                 width: number, height: number) {
  ctx.save();
  ctx.font = "14px system-ui, sans-serif";
  ctx.fillStyle = "rgba(12, 14, 18, 0.72)";
  ctx.fillRect(8, 8, 190, 84);
  ctx.fillStyle = "#e8eaee";
  ctx.fillText(`speed  ${hud.speed}`, 16, 28);
  ctx.fillText(`limit  ${hud.limit}`, 16, 46);
  ctx.fillText(`lane   ${hud.lane}`, 16, 64);
  ctx.fillText(`time   ${hud.timer}`, 16, 82);
  if (hud.stale) {
    ctx.fillStyle = "#e1504a";
    ctx.fillText("STALE LINK", width - 100, 24);
  }
  hud.toasts.forEach((text, i) => {
    ctx.fillStyle = "rgba(180, 60, 50, 0.85)";
    const w = ctx.measureText(text).width + 16;
    ctx.fillRect(width / 2 - w / 2, 16 + i * 26, w, 20);
    ctx.fillStyle = "#fff";
    ctx.fillText(text, width / 2 - w / 2 + 8, 30 + i * 26);
  });
  ctx.restore();
}
