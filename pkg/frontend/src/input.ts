// Input shaping: keyboard arrows ramp toward full deflection, releasing
// springs back; gamepad axes pass through directly. A full left-to-right
// keyboard sweep takes one second, comparable to a wheel's hand speed.

export const STEER_RAMP = 2.0;    // units/s toward +/-1 while held
export const SPRING_BACK = 3.0;   // units/s toward 0 when released
export const PEDAL_RAMP = 2.0;    // units/s toward 1 while held
export const PEDAL_RELEASE = 3.0; // units/s toward 0 when released

export interface Held {
  left: boolean;
  right: boolean;
  up: boolean;
  down: boolean;
}

export interface ControlState {
  steer: number;
  throttle: number;
  brake: number;
}

function towards(value: number, target: number, rate: number, dt: number): number {
  if (value < target) return Math.min(target, value + rate * dt);
  if (value > target) return Math.max(target, value - rate * dt);
  return value;
}

export function keyboardStep(state: ControlState, held: Held, dt: number): ControlState {
  let steer = state.steer;
  if (held.left && !held.right) {
    steer = towards(steer, -1, STEER_RAMP, dt);
  } else if (held.right && !held.left) {
    steer = towards(steer, 1, STEER_RAMP, dt);
  } else {
    steer = towards(steer, 0, SPRING_BACK, dt);
  }
  const throttle = held.up
    ? towards(state.throttle, 1, PEDAL_RAMP, dt)
    : towards(state.throttle, 0, PEDAL_RELEASE, dt);
  const brake = held.down
    ? towards(state.brake, 1, PEDAL_RAMP, dt)
    : towards(state.brake, 0, PEDAL_RELEASE, dt);
  return { steer, throttle, brake };
}

/** Gamepad: steer from the first axis, pedals from the second (push forward
 *  = negative = throttle) unless trigger axes are present. */
export function gamepadControls(axes: readonly number[]): ControlState {
  const steer = axes.length > 0 ? clamp1(axes[0]) : 0;
  let throttle = 0;
  let brake = 0;
  if (axes.length > 1) {
    const pedal = clamp1(axes[1]);
    if (pedal < 0) throttle = -pedal;
    else brake = pedal;
  }
  return { steer, throttle, brake };
}

const clamp1 = (v: number) => Math.min(1, Math.max(-1, v));

/** Sliding one-second window cap on outbound control messages. */
export class SendRateLimiter {
  private sent: number[] = [];
  constructor(private maxPerSecond: number) {}

  allow(nowMs: number): boolean {
    const cutoff = nowMs - 1000;
    while (this.sent.length && this.sent[0] <= cutoff) this.sent.shift();
    if (this.sent.length >= this.maxPerSecond) return false;
    this.sent.push(nowMs);
    return true;
  }

  countInWindow(nowMs: number): number {
    const cutoff = nowMs - 1000;
    return this.sent.filter((t) => t > cutoff).length;
  }
}
