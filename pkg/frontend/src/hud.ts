// HUD view model: pure function of the latest state, session clock, and
// recent events. Event toasts stay visible for one second.

import type { EventMessage, StateMessage } from "./protocol";

export interface Toast {
  text: string;
  shownAt: number;
}

export interface HudModel {
  speed: string;
  limit: string;
  lane: string;
  timer: string;
  toasts: string[];
  stale: boolean;
}

export const TOAST_SECONDS = 1.0;

export function pushToast(toasts: Toast[], ev: EventMessage, now: number): Toast[] {
  const text = `${ev.kind.replace(/_/g, " ")} @ tick ${ev.tick}`;
  return [...toasts, { text, shownAt: now }];
}

export function buildHud(state: StateMessage | null, sessionStart: number,
                         now: number, toasts: Toast[], stale: boolean): HudModel {
  const live = toasts.filter((t) => now - t.shownAt <= TOAST_SECONDS);
  const elapsed = Math.max(0, now - sessionStart);
  return {
    speed: state ? `${(state.ego.v * 100).toFixed(0)} cm/s` : "--",
    limit: state && state.hud.current_limit != null
      ? `${(state.hud.current_limit * 100).toFixed(0)} cm/s` : "--",
    lane: state ? state.hud.lane_id || "(off road)" : "--",
    timer: `${Math.floor(elapsed / 60)}:${String(Math.floor(elapsed % 60)).padStart(2, "0")}`,
    toasts: live.map((t) => t.text),
    stale,
  };
}
