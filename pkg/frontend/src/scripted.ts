// Scripted waypoint driver: pure pursuit over a polyline, used by the
// headless conformance client to lap a figure-eight without hands.

import type { CityMap } from "./mapmodel";
import { wrapAngle } from "./interpolate";

export interface DriverOutput {
  steer: number;
  throttle: number;
  brake: number;
}

export interface Waypoint {
  x: number;
  y: number;
}

const WHEELBASE = 0.16;
const LOOKAHEAD_GAIN = 0.6;
const MIN_LOOKAHEAD = 0.25;

/** Closed polyline through the lane-offset corners of a node loop. */
export function loopWaypoints(map: CityMap, nodeIds: string[], laneWidth: number,
                              pointsPerEdge = 4): Waypoint[] {
  const pts: Waypoint[] = [];
  const n = nodeIds.length;
  for (let i = 0; i < n; i++) {
    const a = map.nodes.get(nodeIds[i])!;
    const b = map.nodes.get(nodeIds[(i + 1) % n])!;
    const len = Math.hypot(b.x - a.x, b.y - a.y);
    const ux = (b.x - a.x) / len;
    const uy = (b.y - a.y) / len;
    const rx = uy; // right of travel
    const ry = -ux;
    const off = laneWidth / 2;
    const inset = laneWidth; // keep corners inside the intersection square
    for (let k = 0; k < pointsPerEdge; k++) {
      const s = inset + (len - 2 * inset) * (k / (pointsPerEdge - 1));
      pts.push({ x: a.x + ux * s + rx * off, y: a.y + uy * s + ry * off });
    }
  }
  return pts;
}

/** A figure eight is one closed node cycle visiting the crossing node twice,
 *  e.g. n0-0 e n0-1 n n1-1 e n1-2 n n2-2 w n2-1 s n1-1 w n1-0 s back. */
export const FIGURE_EIGHT_3X3 = [
  "n0-0", "n0-1", "n1-1", "n1-2", "n2-2", "n2-1", "n1-1", "n1-0",
];

export class WaypointDriver {
  private idx = -1; // initialized to the nearest waypoint on first control
  laps = 0;

  constructor(private waypoints: Waypoint[], private targetSpeed: number) {}

  private bump() {
    this.idx += 1;
    if (this.idx >= this.waypoints.length) {
      this.idx = 0;
      this.laps += 1;
    }
  }

  private advance(x: number, y: number, theta: number) {
    if (this.idx < 0) {
      let best = 0;
      let bestD = Infinity;
      this.waypoints.forEach((wp, i) => {
        const d = Math.hypot(wp.x - x, wp.y - y);
        if (d < bestD) {
          bestD = d;
          best = i;
        }
      });
      this.idx = best;
    }
    // consume reached waypoints, and nearby ones already behind the nose
    // (bounded so far-side loop points never get skipped)
    const hx = Math.cos(theta);
    const hy = Math.sin(theta);
    for (let hop = 0; hop < this.waypoints.length; hop++) {
      const wp = this.waypoints[this.idx];
      const dx = wp.x - x;
      const dy = wp.y - y;
      const d = Math.hypot(dx, dy);
      const behind = dx * hx + dy * hy < 0;
      if (d <= 0.28 || (behind && d <= 0.6)) {
        this.bump();
      } else {
        break;
      }
    }
  }

  control(x: number, y: number, theta: number, v: number): DriverOutput {
    this.advance(x, y, theta);
    const lookahead = Math.max(MIN_LOOKAHEAD, LOOKAHEAD_GAIN * v);
    // target: first waypoint at least lookahead away
    let j = this.idx;
    let target = this.waypoints[j];
    for (let hop = 0; hop < this.waypoints.length; hop++) {
      target = this.waypoints[j % this.waypoints.length];
      if (Math.hypot(target.x - x, target.y - y) >= lookahead) break;
      j += 1;
    }
    const chord = Math.max(Math.hypot(target.x - x, target.y - y), 1e-6);
    const alpha = wrapAngle(Math.atan2(target.y - y, target.x - x) - theta);
    const delta = Math.atan2(2 * WHEELBASE * Math.sin(alpha), chord);
    const steer = Math.min(1, Math.max(-1, delta / 1.2));
    const err = this.targetSpeed - v;
    const throttle = Math.min(1, Math.max(0, 0.8 * err + 0.15));
    const brake = err < -0.15 ? Math.min(1, -err) : 0;
    return { steer, throttle, brake };
  }
}
