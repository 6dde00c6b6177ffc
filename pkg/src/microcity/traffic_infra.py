"""Traffic-light schedules and sign/speed-limit queries over a built map."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from .errors import InvalidValue, UnknownLane

GREEN = "green"
AMBER = "amber"
RED = "red"


@dataclass(frozen=True)
class LightPhaseSchedule:
    """Fixed-cycle green/amber/red timing with a phase offset."""

    green_s: float
    amber_s: float
    red_s: float
    offset_s: float = 0.0

    def __post_init__(self):
        for name in ("green_s", "amber_s", "red_s"):
            if getattr(self, name) < 0:
                raise InvalidValue(name, "must be >= 0")
        if self.cycle_s <= 0:
            raise InvalidValue("schedule", "cycle length must be positive")

    @property
    def cycle_s(self) -> float:
        return self.green_s + self.amber_s + self.red_s

    def to_obj(self):
        return {
            "green_s": self.green_s,
            "amber_s": self.amber_s,
            "red_s": self.red_s,
            "offset_s": self.offset_s,
        }


@dataclass(frozen=True)
class LightState:
    phase: str
    time_to_change: float


def light_state_at(schedule: LightPhaseSchedule, t: float) -> LightState:
    """Phase at time t. A phase boundary belongs to the later phase."""
    p = (t - schedule.offset_s) % schedule.cycle_s
    if p < schedule.green_s:
        return LightState(GREEN, schedule.green_s - p)
    if p < schedule.green_s + schedule.amber_s:
        return LightState(AMBER, schedule.green_s + schedule.amber_s - p)
    return LightState(RED, schedule.cycle_s - p)


def green_intervals_disjoint(a: LightPhaseSchedule, b: LightPhaseSchedule) -> bool:
    """True when the two schedules are never green at the same instant.

    Requires equal cycle lengths (the only configuration the generator emits
    and the only one this check can decide exactly).
    """
    if abs(a.cycle_s - b.cycle_s) > 1e-9:
        return False
    cycle = a.cycle_s
    a0 = a.offset_s % cycle
    b0 = b.offset_s % cycle
    # green windows [start, start+green) on the cycle circle
    for shift in (-cycle, 0.0, cycle):
        lo = max(a0, b0 + shift)
        hi = min(a0 + a.green_s, b0 + shift + b.green_s)
        if hi - lo > 1e-9:
            return False
    return True


def _lane_or_raise(graph, lane_id):
    lane = graph.lanes.get(lane_id)
    if lane is None:
        raise UnknownLane(lane_id)
    return lane


def applicable_speed_limit(graph, lane_id: str, s: float, lookahead: float) -> dict:
    """Posted limit at s plus the nearest limit change within (s, s+lookahead].

    The search continues across lane successors; distance to a change is the
    shortest centerline path. Returns {"current": float, "upcoming": None or
    {"limit": float, "distance": float}}.
    """
    lane = _lane_or_raise(graph, lane_id)
    current = lane.limit_at(s)
    best = None  # (distance, limit)

    for brk_s, brk_v in lane.limit_breaks:
        if brk_s > s:
            if brk_s - s <= lookahead:
                best = (brk_s - s, brk_v)
            break

    remaining = lane.length - s
    cap = lookahead - remaining
    if cap > 0 and (best is None or best[0] > remaining):
        hit = _change_after_end(graph, lane_id, cap)
        if hit is not None:
            d = remaining + hit[0]
            if 0.0 < d <= lookahead and (best is None or d < best[0]):
                best = (d, hit[1])
    upcoming = {"limit": best[1], "distance": best[0]} if best else None
    return {"current": current, "upcoming": upcoming}


def _change_after_end(graph, lane_id, cap):
    """Nearest posted-limit change beyond the lane's end, within cap meters.

    A "change" is an interior breakpoint of a downstream lane or a base-limit
    jump at a lane boundary; distance runs along the shortest continuation.
    Results are cached on the graph (lanes and limits are immutable).
    """
    cached = graph._limit_static.get(lane_id)
    if cached is not None:
        cached_cap, hit = cached
        if hit is not None and hit[0] <= cap:
            return hit
        if cached_cap >= cap:
            return None

    best = None
    heap = [(0.0, lane_id)]
    settled = set()
    while heap:
        d, lid = heapq.heappop(heap)
        if lid in settled or d > cap or (best is not None and d >= best[0]):
            continue
        settled.add(lid)
        pred = graph.lanes[lid]
        limit_at_end = pred.limit_at(pred.length)
        for succ_id in pred.successors:
            succ = graph.lanes[succ_id]
            if succ.limit_at(0.0) != limit_at_end and (best is None or d < best[0]):
                best = (d, succ.limit_at(0.0))
            for bs, bv in succ.limit_breaks:
                if bs > 0.0:
                    if d + bs <= cap and (best is None or d + bs < best[0]):
                        best = (d + bs, bv)
                    break
            if succ_id not in settled and d + succ.length < cap:
                heapq.heappush(heap, (d + succ.length, succ_id))
    graph._limit_static[lane_id] = (cap, best)
    return best if (best is not None and best[0] <= cap) else None


def signal_for_lane(graph, lane_id: str):
    """The light governing the lane's downstream end, or None."""
    lane = _lane_or_raise(graph, lane_id)
    if lane.light is None:
        return None
    return {"light_id": lane.light.light_id, "stop_line_s": lane.light.stop_line_s}
