// Pose interpolation between the two most recent state messages: linear in
// position, shortest-arc in heading. Extrapolation beyond the newest state
// is capped at two state periods; after that the pose holds and the view is
// flagged stale.

export interface TimedPose {
  recvT: number; // client receive time, seconds
  x: number;
  y: number;
  theta: number;
  v: number;
}

export interface SampledPose {
  x: number;
  y: number;
  theta: number;
  stale: boolean;
}

export function wrapAngle(a: number): number {
  let w = a % (2 * Math.PI);
  if (w > Math.PI) w -= 2 * Math.PI;
  else if (w <= -Math.PI) w += 2 * Math.PI;
  return w;
}

/** Shortest-arc interpolation: from -3.1 to +3.1 rad passes through pi, not 0. */
export function lerpHeading(a: number, b: number, u: number): number {
  const d = wrapAngle(b - a);
  return wrapAngle(a + d * u);
}

export class PoseBuffer {
  private a: TimedPose | null = null; // older
  private b: TimedPose | null = null; // newer

  push(p: TimedPose) {
    this.a = this.b;
    this.b = p;
  }

  get latest(): TimedPose | null {
    return this.b;
  }

  sample(now: number): SampledPose | null {
    if (this.b === null) return null;
    if (this.a === null) {
      return { x: this.b.x, y: this.b.y, theta: this.b.theta, stale: false };
    }
    const period = Math.max(this.b.recvT - this.a.recvT, 1e-6);
    let u = (now - this.a.recvT) / period; // u=1 at the newest state
    const ahead = u - 1.0;
    if (ahead > 2.0) {
      return { x: this.b.x, y: this.b.y, theta: this.b.theta, stale: true };
    }
    u = Math.max(0, u);
    return {
      x: this.a.x + (this.b.x - this.a.x) * u,
      y: this.a.y + (this.b.y - this.a.y) * u,
      theta: lerpHeading(this.a.theta, this.b.theta, u),
      stale: false,
    };
  }
}
