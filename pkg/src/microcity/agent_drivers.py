"""Autonomous drivers with an explicit personality parameter vector.

Car following is the Intelligent Driver Model; lane keeping is pure pursuit;
responses to lights, signs, and upcoming speed limits hang off profile knobs
(headway, amber commitment, anticipation distance, dwell).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidValue, NoPath
from .geometry import angle_diff
from .traffic_infra import (
    GREEN,
    RED,
    LightState,
    applicable_speed_limit,
    light_state_at,
)
from .vehicle_plant import ActuatorCommand, VehicleParams, VehicleState, speed_controller

PURSUIT_MIN_LOOKAHEAD = 0.3  # m
STOP_MARGIN = 0.06           # m short of a stop line / sign
HOLD_SPEED = 0.03            # m/s; below this a stop plan pins v_ref to zero
HOLD_BRAKE = 0.2             # parking brake while pinned at a line
SPEED_GAINS = {"kp": 1.5, "ki": 0.8}
LIGHT_HORIZON = 3.0          # m, how far ahead lights are considered
SIGN_HORIZON = 2.0
LEAD_HORIZON = 4.0
LIMIT_LOOKAHEAD = 3.0
SIGN_STOP_ZONE = 0.3         # m; a qualifying stop must happen this close
STOPPED_V = 0.05


@dataclass(frozen=True)
class PersonalityProfile:
    """The unconstrained degrees of freedom that distinguish driving styles."""

    time_headway_T: float = 1.5     # s
    min_gap_s0: float = 0.1         # m
    desired_speed_factor: float = 1.0
    max_accel: float = 0.5          # m/s^2
    comfort_decel: float = 0.5      # m/s^2
    amber_commit_decel: float = 1.2  # m/s^2 accepted to stop for amber
    limit_anticipation: float = 0.5  # m lookahead for upcoming limits
    stop_sign_dwell: float = 1.0    # s
    lookahead_gain: float = 0.5     # s; pursuit lookahead = gain * v

    def __post_init__(self):
        for name in ("time_headway_T", "min_gap_s0", "max_accel", "comfort_decel",
                     "limit_anticipation", "stop_sign_dwell", "lookahead_gain"):
            if getattr(self, name) <= 0:
                raise InvalidValue(name, "must be positive")
        if not 0.5 <= self.desired_speed_factor <= 1.5:
            raise InvalidValue("desired_speed_factor", "must be in [0.5, 1.5]")
        if self.amber_commit_decel < 0:
            raise InvalidValue("amber_commit_decel", "must be >= 0")

    def to_obj(self):
        return {
            "time_headway_T": self.time_headway_T,
            "min_gap_s0": self.min_gap_s0,
            "desired_speed_factor": self.desired_speed_factor,
            "max_accel": self.max_accel,
            "comfort_decel": self.comfort_decel,
            "amber_commit_decel": self.amber_commit_decel,
            "limit_anticipation": self.limit_anticipation,
            "stop_sign_dwell": self.stop_sign_dwell,
            "lookahead_gain": self.lookahead_gain,
        }

    @classmethod
    def from_obj(cls, obj):
        return cls(**obj)

    def as_tuple(self):
        return (
            self.time_headway_T, self.min_gap_s0, self.desired_speed_factor,
            self.max_accel, self.comfort_decel, self.amber_commit_decel,
            self.limit_anticipation, self.stop_sign_dwell, self.lookahead_gain,
        )


DEFENSIVE = PersonalityProfile(
    time_headway_T=1.8, min_gap_s0=0.12, desired_speed_factor=0.95,
    max_accel=0.4, comfort_decel=0.5, amber_commit_decel=1.5,
    limit_anticipation=1.0, stop_sign_dwell=2.0, lookahead_gain=0.5,
)
AGGRESSIVE = PersonalityProfile(
    time_headway_T=0.8, min_gap_s0=0.08, desired_speed_factor=1.15,
    max_accel=0.8, comfort_decel=0.9, amber_commit_decel=1.0,
    limit_anticipation=0.1, stop_sign_dwell=0.5, lookahead_gain=0.35,
)
PRESETS = {"defensive": DEFENSIVE, "aggressive": AGGRESSIVE}


@dataclass
class WorldSnapshot:
    """Everything one driver can see at one tick."""

    t: float
    ego_state: VehicleState
    lane_id: str
    s: float
    lead: dict | None            # {"gap": m, "v": m/s}
    light_ahead: dict | None     # {"light_id", "state": LightState, "distance_to_stop_line"}
    limits: dict                 # applicable_speed_limit output
    signs_ahead: list            # [{"kind", "distance", "key"}]


def idm_accel(v: float, v_desired: float, gap, lead_v, profile: PersonalityProfile) -> float:
    """IDM acceleration; clamped to [-2*comfort_decel, max_accel].

    gap is bumper-to-bumper; a non-positive gap is an emergency and returns
    the clamp floor.
    """
    floor = -2.0 * profile.comfort_decel
    if gap is not None and gap <= 0.0:
        return floor
    a = profile.max_accel * (1.0 - (v / v_desired) ** 4)
    if gap is not None:
        s_star = profile.min_gap_s0 + v * profile.time_headway_T + \
            v * (v - lead_v) / (2.0 * math.sqrt(profile.max_accel * profile.comfort_decel))
        s_star = max(s_star, profile.min_gap_s0)
        a -= profile.max_accel * (s_star / gap) ** 2
    return min(profile.max_accel, max(floor, a))


def idm_equilibrium_gap(v: float, v_desired: float, profile: PersonalityProfile) -> float:
    """Steady-state bumper gap while pacing a leader at speed v."""
    s_star = profile.min_gap_s0 + v * profile.time_headway_T
    return s_star / math.sqrt(1.0 - (v / v_desired) ** 4)


def required_decel(v: float, d_stop: float) -> float:
    return v * v / (2.0 * max(d_stop, 0.01))


def signal_decision(v: float, light: LightState, d_stop: float,
                    profile: PersonalityProfile) -> str:
    """'stop' or 'proceed' for a light at d_stop meters (front bumper)."""
    if light.phase == GREEN:
        return "proceed"
    need = required_decel(v, d_stop)
    if light.phase == RED:
        # stop whenever physically reasonable; otherwise clear the junction
        return "stop" if need <= 2.0 * profile.comfort_decel else "proceed"
    return "stop" if need <= profile.amber_commit_decel else "proceed"


class RouteCursor:
    """Tracks a vehicle's position along a lazily extended lane chain.

    Successor choices are drawn from a dedicated seeded generator in chain
    order, so two runs over the same seed take identical routes regardless of
    speed. U-turn connectors are avoided unless they are the only option.
    """

    def __init__(self, graph, lane_id, s, rng=None, avoid_uturns=True):
        self.graph = graph
        self.chain = [lane_id]
        self.idx = 0
        self.s = s
        self.rng = rng
        self.avoid_uturns = avoid_uturns

    @property
    def lane_id(self):
        return self.chain[self.idx]

    def _is_uturn(self, from_lane_id, conn_id):
        conn = self.graph.lanes[conn_id]
        if not conn.successors:
            return False
        nxt = self.graph.lanes[conn.successors[0]]
        src = self.graph.lanes[from_lane_id]
        return nxt.segment_id == src.segment_id and nxt.direction != src.direction

    def _choose_successor(self, lane_id):
        succs = self.graph.lanes[lane_id].successors
        if not succs:
            raise NoPath(f"lane {lane_id} has no successor")
        options = succs
        if self.avoid_uturns and len(succs) > 1:
            non_u = [c for c in succs if not self._is_uturn(lane_id, c)]
            if non_u:
                options = non_u
        if len(options) == 1 or self.rng is None:
            return options[0]
        return options[int(self.rng.integers(0, len(options)))]

    def _extend(self):
        self.chain.append(self._choose_successor(self.chain[-1]))

    def ensure_ahead(self, dist):
        """Extend the chain until dist meters beyond the current position exist."""
        have = self.graph.lanes[self.chain[self.idx]].length - self.s
        k = self.idx + 1
        while have < dist:
            if k >= len(self.chain):
                self._extend()
            have += self.graph.lanes[self.chain[k]].length
            k += 1

    def sync(self, x, y):
        """Re-project onto the chain, advancing across lane boundaries."""
        self.ensure_ahead(0.5)
        best = None
        for j in range(self.idx, min(self.idx + 3, len(self.chain))):
            lane = self.graph.lanes[self.chain[j]]
            s, lat, dist = lane.centerline.project(x, y)
            at_end = s >= lane.length - 1e-9 and j + 1 < len(self.chain)
            score = dist + (0.001 if at_end else 0.0)
            if best is None or score < best[0] - 1e-12:
                best = (score, j, s, lat)
        _, self.idx, self.s, _ = best
        if self.idx > 4:
            self.chain = self.chain[self.idx - 1:]
            self.idx = 1

    def point_ahead(self, dist):
        """(x, y) at arc length dist beyond the current position."""
        self.ensure_ahead(dist + 1e-6)
        remaining = dist
        j = self.idx
        s = self.s
        while True:
            lane = self.graph.lanes[self.chain[j]]
            if s + remaining <= lane.length or j + 1 >= len(self.chain):
                return lane.centerline.point_at(s + remaining)
            remaining -= lane.length - s
            j += 1
            s = 0.0

    def walk(self, horizon):
        """Yield (lane_id, start_offset) pairs covering [0, horizon] ahead.

        start_offset is the chain distance from the current position to the
        lane's start (negative fraction consumed for the current lane).
        """
        self.ensure_ahead(horizon)
        offset = -self.s
        for j in range(self.idx, len(self.chain)):
            if offset > horizon:
                break
            yield self.chain[j], offset
            offset += self.graph.lanes[self.chain[j]].length


def lane_follow_steer(state: VehicleState, cursor: RouteCursor,
                      profile: PersonalityProfile, params: VehicleParams) -> float:
    """Pure-pursuit steer command in [-1, 1] toward a speed-scaled lookahead.

    The target sits lookahead arc length ahead on the route; curvature uses
    the euclidean chord to it, so tracking a circular connector commands the
    circle's exact steady-state steer.
    """
    l_d = max(PURSUIT_MIN_LOOKAHEAD, profile.lookahead_gain * state.v)
    tx, ty = cursor.point_ahead(l_d)
    chord = max(math.hypot(tx - state.x, ty - state.y), 1e-9)
    alpha = angle_diff(math.atan2(ty - state.y, tx - state.x), state.theta)
    delta = math.atan2(2.0 * params.wheelbase * math.sin(alpha), chord)
    return min(1.0, max(-1.0, delta / params.max_steer))


@dataclass
class AgentCtlState:
    cursor: RouteCursor
    v_ref: float = 0.0
    pi: dict = None
    stop_plan: dict = None   # {"key", "decel"} active stop-for-light plan
    sign_states: dict = None  # key -> {"phase": approach|dwell|done, "timer": s}

    def __post_init__(self):
        if self.pi is None:
            self.pi = {"integral": 0.0}
        if self.sign_states is None:
            self.sign_states = {}


def _stop_allowance(v, dist, plan_decel):
    d_eff = max(dist - STOP_MARGIN, 0.0)
    v_allow = math.sqrt(2.0 * plan_decel * d_eff)
    return 0.0 if v_allow < HOLD_SPEED else v_allow


def _feedforward_brake(v, dist, v_allow, params):
    """Brake needed right now to hold the stopping profile.

    The PI loop alone lags a fast-dropping reference by roughly decel/kp,
    enough to slide past a short stop margin; this closes that gap.
    """
    if v <= v_allow or v <= 0.0:
        return 0.0
    need = required_decel(v, max(dist - STOP_MARGIN, 0.005))
    return min(1.0, max(0.0, (need - params.drag_coeff * v) / params.max_brake_decel))


def agent_policy(snapshot: WorldSnapshot, profile: PersonalityProfile,
                 params: VehicleParams, ctl: AgentCtlState, dt: float):
    """One control tick: world snapshot in, actuator command out.

    Deterministic given inputs. Returns (ActuatorCommand, ctl).
    """
    v = snapshot.ego_state.v

    # desired speed from posted limits, anticipating upcoming drops
    limit = snapshot.limits["current"]
    upcoming = snapshot.limits.get("upcoming")
    if upcoming and upcoming["distance"] <= profile.limit_anticipation:
        limit = min(limit, upcoming["limit"])
    v_desired = max(profile.desired_speed_factor * limit, 0.05)

    gap = lead_v = None
    if snapshot.lead is not None:
        gap = snapshot.lead["gap"]
        lead_v = snapshot.lead["v"]
    a_target = idm_accel(v, v_desired, gap, lead_v, profile)
    v_ref = max(0.0, min(ctl.v_ref + a_target * dt, v_desired))

    # traffic light; once a stop is committed it holds until green so that
    # tracking jitter cannot flip the decision mid-brake
    brake_ff = 0.0
    hold = False
    light = snapshot.light_ahead
    if light is not None:
        d = light["distance_to_stop_line"]
        engaged = ctl.stop_plan is not None and ctl.stop_plan["key"] == light["light_id"]
        if light["state"].phase == GREEN:
            ctl.stop_plan = None
        else:
            if not engaged and signal_decision(v, light["state"], d, profile) == "stop":
                ctl.stop_plan = {
                    "key": light["light_id"],
                    "decel": max(profile.comfort_decel,
                                 required_decel(v, max(d - STOP_MARGIN, 0.01))),
                }
                engaged = True
            if engaged:
                v_allow = _stop_allowance(v, d, ctl.stop_plan["decel"])
                v_ref = min(v_ref, v_allow)
                brake_ff = max(brake_ff, _feedforward_brake(v, d, v_allow, params))
                hold = hold or v_allow == 0.0
    else:
        ctl.stop_plan = None

    # signs
    live_keys = set()
    for sign in snapshot.signs_ahead:
        key = sign["key"]
        live_keys.add(key)
        if sign["kind"] == "yield":
            if sign["distance"] <= 0.5:
                v_ref = min(v_ref, max(0.15, 0.5 * snapshot.limits["current"]))
            continue
        st = ctl.sign_states.get(key)
        if st is None:
            st = {"phase": "approach", "timer": profile.stop_sign_dwell}
            ctl.sign_states[key] = st
        if st["phase"] == "approach":
            plan = max(profile.comfort_decel,
                       required_decel(v, max(sign["distance"] - STOP_MARGIN, 0.01)))
            v_allow = _stop_allowance(v, sign["distance"], plan)
            v_ref = min(v_ref, v_allow)
            brake_ff = max(brake_ff, _feedforward_brake(v, sign["distance"], v_allow, params))
            hold = hold or v_allow == 0.0
            if v <= STOPPED_V and sign["distance"] <= SIGN_STOP_ZONE:
                st["phase"] = "dwell"
        elif st["phase"] == "dwell":
            v_ref = 0.0
            hold = True
            st["timer"] -= dt
            if st["timer"] <= 0.0:
                st["phase"] = "done"
    for key in list(ctl.sign_states):
        if key not in live_keys:
            del ctl.sign_states[key]

    ctl.v_ref = v_ref
    hold = hold or (v_ref == 0.0 and v <= 2 * STOPPED_V)
    throttle, brake, ctl.pi = speed_controller(v_ref, v, ctl.pi, SPEED_GAINS, dt)
    if hold:
        # parking brake at the line; drain the integral so no throttle leaks
        throttle = 0.0
        brake = max(brake, HOLD_BRAKE, brake_ff)
        ctl.pi = {"integral": 0.0}
    elif brake_ff > 0.0:
        throttle = 0.0
        brake = max(brake, brake_ff)
    steer = lane_follow_steer(snapshot.ego_state, ctl.cursor, profile, params)
    return ActuatorCommand(steer, throttle, brake), ctl


def build_snapshot(graph, t, vehicle_id, state, ctl: AgentCtlState,
                   others, params_by_id) -> WorldSnapshot:
    """Assemble the per-driver world view from ground-truth world state.

    others: {vehicle_id: (lane_id, s, v)} for every other vehicle with an
    on-map assignment.
    """
    cursor = ctl.cursor
    cursor.sync(state.x, state.y)
    lane_id, s = cursor.lane_id, cursor.s
    ego_len = params_by_id[vehicle_id].body_length

    lead = None
    for lid, off in cursor.walk(LEAD_HORIZON):
        for vid in sorted(others):
            o_lane, o_s, o_v = others[vid]
            if o_lane != lid:
                continue
            ahead = off + o_s
            if ahead <= 1e-9:
                continue
            gap = ahead - 0.5 * (ego_len + params_by_id[vid].body_length)
            if gap > LEAD_HORIZON:
                continue
            if lead is None or gap < lead["gap"]:
                lead = {"gap": gap, "v": o_v}
        if lead is not None:
            break

    light_ahead = None
    for lid, off in cursor.walk(LIGHT_HORIZON):
        lane = graph.lanes[lid]
        if lane.light is not None:
            d_line = off + lane.light.stop_line_s
            if d_line < -1e-9:
                continue
            light_ahead = {
                "light_id": lane.light.light_id,
                "state": light_state_at(lane.light.schedule, t),
                "distance_to_stop_line": max(0.0, d_line - 0.5 * ego_len),
            }
            break

    signs_ahead = []
    for lid, off in cursor.walk(SIGN_HORIZON):
        for sign in graph.lanes[lid].signs:
            d = off + sign.s
            if 1e-9 < d <= SIGN_HORIZON:
                signs_ahead.append({
                    "kind": sign.kind,
                    "distance": max(0.0, d - 0.5 * ego_len),
                    "key": (lid, round(sign.s, 6), sign.kind),
                })

    limits = applicable_speed_limit(graph, lane_id, s, LIMIT_LOOKAHEAD)
    return WorldSnapshot(
        t=t, ego_state=state, lane_id=lane_id, s=s, lead=lead,
        light_ahead=light_ahead, limits=limits, signs_ahead=signs_ahead,
    )


class AgentController:
    """Drives one vehicle: snapshot -> policy -> command."""

    kind = "agent"

    def __init__(self, graph, profile, params, lane_id, s, v0=0.0, route_rng=None):
        self.graph = graph
        self.profile = profile
        self.params = params
        self.ctl = AgentCtlState(cursor=RouteCursor(graph, lane_id, s, route_rng))
        self.ctl.v_ref = v0

    def command(self, t, vehicle_id, state, others, params_by_id, dt):
        snap = build_snapshot(self.graph, t, vehicle_id, state, self.ctl,
                              others, params_by_id)
        cmd, self.ctl = agent_policy(snap, self.profile, self.params, self.ctl, dt)
        return cmd
