import { describe, expect, it } from "vitest";
import { SendRateLimiter, gamepadControls, keyboardStep } from "../src/input";
import type { ControlState, Held } from "../src/input";

const rest: ControlState = { steer: 0, throttle: 0, brake: 0 };
const none: Held = { left: false, right: false, up: false, down: false };

function run(state: ControlState, held: Held, seconds: number, dt = 0.01) {
  for (let t = 0; t < seconds - 1e-9; t += dt) state = keyboardStep(state, held, dt);
  return state;
}

describe("keyboard ramps", () => {
  it("right arrow held 0.25 s from rest reaches steer 0.5", () => {
    const out = run(rest, { ...none, right: true }, 0.25);
    expect(out.steer).toBeCloseTo(0.5, 6);
  });

  it("full sweep to +1 takes about a second from -1", () => {
    const from = { steer: -1, throttle: 0, brake: 0 };
    const out = run(from, { ...none, right: true }, 1.0);
    expect(out.steer).toBeCloseTo(1.0, 6);
  });

  it("steer springs back toward zero at 3 units/s when released", () => {
    const deflected = { steer: 0.9, throttle: 0, brake: 0 };
    const out = run(deflected, none, 0.2);
    expect(out.steer).toBeCloseTo(0.9 - 3.0 * 0.2, 6);
    const settled = run(deflected, none, 1.0);
    expect(settled.steer).toBe(0);
  });

  it("up arrow ramps throttle at 2 units/s", () => {
    const out = run(rest, { ...none, up: true }, 0.3);
    expect(out.throttle).toBeCloseTo(0.6, 6);
    expect(out.brake).toBe(0);
  });

  it("opposite arrows cancel to spring-back", () => {
    const deflected = { steer: 0.5, throttle: 0, brake: 0 };
    const out = keyboardStep(deflected, { ...none, left: true, right: true }, 0.1);
    expect(out.steer).toBeCloseTo(0.2, 6);
  });
});

describe("gamepad mapping", () => {
  it("axis -0.33 maps directly to steer -0.33", () => {
    expect(gamepadControls([-0.33]).steer).toBeCloseTo(-0.33, 9);
  });

  it("pedal axis splits throttle and brake", () => {
    expect(gamepadControls([0, -0.7]).throttle).toBeCloseTo(0.7, 9);
    expect(gamepadControls([0, 0.4]).brake).toBeCloseTo(0.4, 9);
  });

  it("out-of-range axes clamp", () => {
    expect(gamepadControls([2.5]).steer).toBe(1);
  });
});

describe("send rate limiter", () => {
  it("never exceeds the cap in any one-second window", () => {
    const limiter = new SendRateLimiter(50);
    let sent = 0;
    // attempt 200 Hz for 3 seconds
    for (let ms = 0; ms < 3000; ms += 5) {
      if (limiter.allow(ms)) sent += 1;
      expect(limiter.countInWindow(ms)).toBeLessThanOrEqual(50);
    }
    expect(sent).toBeGreaterThan(100); // still flowing
    expect(sent).toBeLessThanOrEqual(151); // 50/s over 3 s (+1 boundary)
  });
});
