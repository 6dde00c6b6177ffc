"""Deterministic fixed-timestep world stepper.

Advances every vehicle through the actuation chain (direct or PWM-quantized),
RK4 dynamics, and seeded sensors; recomputes lane assignments and light
states; detects collision / lane-change / red-light-entry / off-road /
stop-sign events; and runs headless scenarios into replayable SessionLogs.

(scenario, seed) -> SessionLog is a pure function: per-vehicle random streams
are split from the scenario seed by a stable hash of the vehicle id, and
vehicles are always processed in ascending id order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .agent_drivers import PRESETS, AgentController, PersonalityProfile, RouteCursor
from .canonical import canonical_json, digest_of, fnv1a64, round6
from .errors import (
    DigestMismatch,
    OffMap,
    ScenarioError,
    UnknownVehicle,
)
from .map_model import MapGraph, build_graph, generate_grid, locate, parse_map
from .teleop_service import (
    FAILSAFE_BRAKE,
    FAILSAFE_TIMEOUT_S,
    BackendDescriptor,
    ChannelModel,
    ChannelSim,
    ZERO_CHANNEL,
)
from .telemetry_analytics import (
    EPOCH_SENTINEL,
    EventRecord,
    SessionLog,
    TelemetryRecord,
)
from .traffic_infra import RED, LightPhaseSchedule, light_state_at
from .vehicle_plant import (
    ActuatorCommand,
    FusionFilter,
    NoiseConfig,
    SensorRig,
    VehicleParams,
    VehicleState,
    command_to_pwm,
    direct_plant_inputs,
    encoder_speed,
    pwm_to_plant_inputs,
    speed_controller,
)

COLLISION_EPS = 1e-9      # strict overlap margin: touching is not collision
SIGN_STOP_WINDOW = 0.3    # m upstream of a stop sign where a stop counts
SIGN_MIN_STOP_S = 0.5     # s a qualifying stop must last
STOPPED_V = 0.05


def vehicle_hash(vehicle_id: str) -> int:
    return fnv1a64(vehicle_id.encode("utf-8"))


def _rng_for(seed: int, vehicle_id: str, stream: int):
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed & (2**64 - 1),
                                                vehicle_hash(vehicle_id), stream]))
    )


# ---------------------------------------------------------------------------
# oriented-rectangle collision (separating axis test)

@dataclass(frozen=True)
class Footprint:
    vehicle_id: str
    x: float
    y: float
    theta: float
    length: float
    width: float


def _obb_overlap(a: Footprint, b: Footprint) -> bool:
    dx = b.x - a.x
    dy = b.y - a.y
    ra = 0.5 * math.hypot(a.length, a.width)
    rb = 0.5 * math.hypot(b.length, b.width)
    if math.hypot(dx, dy) > ra + rb:
        return False
    ca, sa = math.cos(a.theta), math.sin(a.theta)
    cb, sb = math.cos(b.theta), math.sin(b.theta)
    axes = ((ca, sa), (-sa, ca), (cb, sb), (-sb, cb))
    half = (
        (0.5 * a.length, 0.5 * a.width, ca, sa),
        (0.5 * b.length, 0.5 * b.width, cb, sb),
    )
    for ax, ay in axes:
        proj_d = abs(dx * ax + dy * ay)
        r = 0.0
        for hl, hw, c, s in half:
            r += hl * abs(c * ax + s * ay) + hw * abs(-s * ax + c * ay)
        if proj_d >= r - COLLISION_EPS:
            return False
    return True


def detect_collision_pairs(footprints) -> list:
    """Strictly overlapping rectangle pairs, ascending id order."""
    fps = sorted(footprints, key=lambda f: f.vehicle_id)
    pairs = []
    for i in range(len(fps)):
        for j in range(i + 1, len(fps)):
            if _obb_overlap(fps[i], fps[j]):
                pairs.append((fps[i].vehicle_id, fps[j].vehicle_id))
    return pairs


# ---------------------------------------------------------------------------
# scenario model

@dataclass
class VehicleSpec:
    vehicle_id: str
    params: VehicleParams
    noise: NoiseConfig | None          # None = noiseless sensors
    start_lane: str
    start_s: float
    start_v: float
    controller: dict                   # {"kind": ...} per controller type
    backend: BackendDescriptor

    def to_obj(self):
        return {
            "vehicle_id": self.vehicle_id,
            "params": self.params.to_obj(),
            "noise": "off" if self.noise is None else self.noise.to_obj(),
            "start": {"lane_id": self.start_lane, "s": self.start_s, "v": self.start_v},
            "controller": self.controller,
            "backend": self.backend.to_obj(),
        }


@dataclass
class ScenarioSpec:
    name: str
    map_source: dict
    duration_s: float
    physics_dt: float
    seed: int
    vehicles: list                     # sorted by vehicle_id
    schedule_overrides: dict
    subject_vehicle_id: str
    driver_label: str = ""
    order_index: int = 0

    def to_obj(self):
        return {
            "name": self.name,
            "map": self.map_source,
            "duration_s": self.duration_s,
            "physics_dt": self.physics_dt,
            "seed": self.seed,
            "vehicles": [v.to_obj() for v in self.vehicles],
            "schedule_overrides": {
                k: v.to_obj() for k, v in self.schedule_overrides.items()
            },
            "subject_vehicle_id": self.subject_vehicle_id,
            "driver_label": self.driver_label,
            "order_index": self.order_index,
        }

    def digest(self):
        return digest_of(self.to_obj())

    def vehicle(self, vehicle_id):
        for v in self.vehicles:
            if v.vehicle_id == vehicle_id:
                return v
        raise UnknownVehicle(vehicle_id)


def parse_scenario(obj: dict, base_dir: str = ".") -> ScenarioSpec:
    """Validate a scenario object (already JSON-decoded) into a ScenarioSpec."""
    if not isinstance(obj, dict):
        raise ScenarioError("scenario must be a JSON object")
    for key in ("name", "map", "duration_s", "seed", "vehicles"):
        if key not in obj:
            raise ScenarioError(f"scenario missing key {key!r}")
    duration = float(obj["duration_s"])
    dt = float(obj.get("physics_dt", 0.01))
    if duration <= 0 or dt <= 0:
        raise ScenarioError("duration_s and physics_dt must be positive")
    seed = obj["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ScenarioError("seed must be a non-negative integer")

    vehicles = []
    ids = set()
    for vs in obj["vehicles"]:
        vid = vs.get("vehicle_id")
        if not isinstance(vid, str) or not vid or "," in vid:
            raise ScenarioError(f"bad vehicle_id {vid!r}")
        if vid in ids:
            raise ScenarioError(f"duplicate vehicle_id {vid!r}")
        ids.add(vid)
        params = VehicleParams.from_obj(vs["params"]) if isinstance(vs.get("params"), dict) \
            else VehicleParams()
        noise_obj = vs.get("noise", "off")
        noise = None if noise_obj == "off" else NoiseConfig.from_obj(noise_obj)
        start = vs.get("start")
        if not isinstance(start, dict) or "lane_id" not in start:
            raise ScenarioError(f"vehicle {vid}: start must give lane_id and s")
        controller = vs.get("controller", {"kind": "external"})
        kind = controller.get("kind")
        if kind not in ("agent", "external", "replay", "cruise"):
            raise ScenarioError(f"vehicle {vid}: unknown controller kind {kind!r}")
        backend = BackendDescriptor.from_obj(vs["backend"]) if "backend" in vs \
            else BackendDescriptor()
        vehicles.append(VehicleSpec(
            vehicle_id=vid, params=params, noise=noise,
            start_lane=start["lane_id"], start_s=float(start.get("s", 0.0)),
            start_v=float(start.get("v", 0.0)),
            controller=controller, backend=backend,
        ))
    if not vehicles:
        raise ScenarioError("scenario needs at least one vehicle")
    vehicles.sort(key=lambda v: v.vehicle_id)

    overrides = {}
    for sid, sch in obj.get("schedule_overrides", {}).items():
        overrides[sid] = LightPhaseSchedule(
            sch["green_s"], sch["amber_s"], sch["red_s"], sch.get("offset_s", 0.0)
        )

    subject = obj.get("subject_vehicle_id", vehicles[0].vehicle_id)
    if subject not in ids:
        raise ScenarioError(f"subject_vehicle_id {subject!r} not among vehicles")
    return ScenarioSpec(
        name=str(obj["name"]), map_source=obj["map"], duration_s=duration,
        physics_dt=dt, seed=seed, vehicles=vehicles, schedule_overrides=overrides,
        subject_vehicle_id=subject, driver_label=str(obj.get("driver_label", "")),
        order_index=int(obj.get("order_index", 0)),
    )


def load_scenario(path: str) -> ScenarioSpec:
    import json
    import os

    with open(path, "r", encoding="utf-8") as f:
        obj = json.load(f)
    return parse_scenario(obj, base_dir=os.path.dirname(os.path.abspath(path)))


_GRAPH_CACHE: dict = {}


def effective_map_spec(scenario: ScenarioSpec):
    src = scenario.map_source
    if "grid" in src:
        g = src["grid"]
        spec = generate_grid(g["rows"], g["cols"], g["block_length"],
                             g["lane_width"], g["default_limit"])
    elif "embedded" in src:
        spec = parse_map(canonical_json(src["embedded"]))
    elif "path" in src:
        with open(src["path"], "r", encoding="utf-8") as f:
            spec = parse_map(f.read())
        if "digest" in src and src["digest"] != spec.digest():
            raise DigestMismatch(src["digest"], spec.digest(), what="map")
    else:
        raise ScenarioError("map must give grid, embedded, or path")
    if scenario.schedule_overrides:
        spec.schedules = dict(spec.schedules)
        spec.schedules.update(scenario.schedule_overrides)
    return spec


def build_scenario_graph(scenario: ScenarioSpec) -> MapGraph:
    spec = effective_map_spec(scenario)
    digest = spec.digest()
    graph = _GRAPH_CACHE.get(digest)
    if graph is None:
        graph = build_graph(spec)
        _GRAPH_CACHE[digest] = graph
    return graph


def scenario_with_profile(scenario: ScenarioSpec, vehicle_id: str,
                          profile: PersonalityProfile) -> ScenarioSpec:
    """Copy of the scenario with one vehicle driven by an agent profile."""
    vehicles = []
    for v in scenario.vehicles:
        if v.vehicle_id == vehicle_id:
            v = replace(v, controller={"kind": "agent", "profile": profile.to_obj()})
        vehicles.append(v)
    return replace(scenario, vehicles=vehicles)


# ---------------------------------------------------------------------------
# controllers

class CruiseController:
    """Holds a target speed, optionally ramping to a stop at a set time."""

    kind = "cruise"

    def __init__(self, graph, params, lane_id, s, target_speed,
                 stop_at_t=None, stop_decel=1.0, route_rng=None):
        self.cursor = RouteCursor(graph, lane_id, s, route_rng)
        self.params = params
        self.target = target_speed
        self.stop_at_t = stop_at_t
        self.stop_decel = stop_decel
        self.pi = {"integral": 0.0}

    def command(self, t, vehicle_id, state, others, params_by_id, dt):
        from .agent_drivers import HOLD_BRAKE, PURSUIT_MIN_LOOKAHEAD, STOPPED_V

        v_ref = self.target
        if self.stop_at_t is not None and t >= self.stop_at_t:
            v_ref = max(0.0, self.target - self.stop_decel * (t - self.stop_at_t))
        throttle, brake, self.pi = speed_controller(v_ref, state.v, self.pi,
                                                    {"kp": 1.5, "ki": 0.8}, dt)
        if v_ref == 0.0 and state.v <= 2 * STOPPED_V:
            throttle, brake = 0.0, max(brake, HOLD_BRAKE)
            self.pi = {"integral": 0.0}
        self.cursor.sync(state.x, state.y)
        l_d = max(PURSUIT_MIN_LOOKAHEAD, 0.5 * state.v)
        tx, ty = self.cursor.point_ahead(l_d)
        chord = max(math.hypot(tx - state.x, ty - state.y), 1e-9)
        alpha = math.atan2(ty - state.y, tx - state.x) - state.theta
        alpha = math.atan2(math.sin(alpha), math.cos(alpha))
        delta = math.atan2(2.0 * self.params.wheelbase * math.sin(alpha), chord)
        steer = min(1.0, max(-1.0, delta / self.params.max_steer))
        return ActuatorCommand(steer, throttle, brake)


class CommandFeed:
    """Teleoperated command path: channel delivery, latest-wins, failsafe.

    Also serves replayed command logs; with a zero channel a command sent at
    tick time t is applied in the step beginning at t.
    """

    def __init__(self, channel_model: ChannelModel, rng, start_t=0.0,
                 failsafe_timeout_s=FAILSAFE_TIMEOUT_S):
        self.channel = ChannelSim(channel_model, "up", rng)
        self.inbox = []            # (deliver_at, seq, ActuatorCommand)
        self.applied = ActuatorCommand(0.0, 0.0, 0.0)
        self.applied_seq = -1
        self.last_delivery_t = start_t
        self.failsafe_timeout_s = failsafe_timeout_s
        self._cursor = 0

    def send(self, now, seq, cmd: ActuatorCommand):
        deliver_at = self.channel.send(now)
        if deliver_at is None:
            return None
        self.inbox.append((deliver_at, seq, cmd))
        return deliver_at

    def poll(self, t) -> ActuatorCommand:
        newest = None
        while self._cursor < len(self.inbox) and self.inbox[self._cursor][0] <= t + 1e-12:
            entry = self.inbox[self._cursor]
            if newest is None or entry[1] > newest[1]:
                newest = entry
            self._cursor += 1
        if newest is not None:
            if newest[1] > self.applied_seq:
                self.applied = newest[2]
                self.applied_seq = newest[1]
            self.last_delivery_t = newest[0]
        if t - self.last_delivery_t > self.failsafe_timeout_s:
            return ActuatorCommand(self.applied.steer, 0.0, FAILSAFE_BRAKE)
        return self.applied


class ReplayDirect:
    """Tick-aligned command replay (no channel)."""

    def __init__(self, by_tick: dict):
        self.by_tick = by_tick
        self.last = ActuatorCommand(0.0, 0.0, 0.0)

    def command_for_tick(self, tick):
        cmd = self.by_tick.get(tick)
        if cmd is not None:
            self.last = cmd
        return self.last


# ---------------------------------------------------------------------------
# world

@dataclass
class VehicleRuntime:
    spec: VehicleSpec
    state: VehicleState
    controller: object
    feed: CommandFeed | None
    replay: ReplayDirect | None
    rig: SensorRig
    filter: FusionFilter
    assignment: object            # LaneAssignment | None
    command: ActuatorCommand
    frozen: bool = False
    encoder_v: float = 0.0
    fused_v: float = 0.0
    fused_a: float = 0.0
    last_frame: object = None     # latest SensorFrame
    sign_credit: dict = None      # (lane_id, sign_s) -> {"run": s, "best": s}

    def __post_init__(self):
        if self.sign_credit is None:
            self.sign_credit = {}


class World:
    """Single-owner stepping context for one scenario."""

    def __init__(self, scenario: ScenarioSpec, graph: MapGraph | None = None,
                 command_log_loader=None, failsafe_timeout_s=FAILSAFE_TIMEOUT_S):
        self.scenario = scenario
        self.graph = graph or build_scenario_graph(scenario)
        self.dt = scenario.physics_dt
        self.failsafe_timeout_s = failsafe_timeout_s
        self.tick = 0
        self.events: list = []
        self.records: list = []
        self._contact_pairs: set = set()
        self._offmap: set = set()
        self.vehicles: dict = {}
        self._params_by_id = {v.vehicle_id: v.params for v in scenario.vehicles}
        self._win_ticks = {}

        for vs in scenario.vehicles:
            lane = self.graph.lanes.get(vs.start_lane)
            if lane is None:
                raise ScenarioError(f"vehicle {vs.vehicle_id}: unknown start lane {vs.start_lane!r}")
            if not 0.0 <= vs.start_s <= lane.length:
                raise ScenarioError(f"vehicle {vs.vehicle_id}: start s outside lane")
            pose = lane.pose_at(vs.start_s)
            state = VehicleState(x=pose.x, y=pose.y, theta=pose.heading,
                                 v=vs.start_v, a=0.0, delta=0.0)
            noise = vs.noise if (vs.noise is not None and
                                 (vs.backend.kind == "sim" or vs.backend.noise_on)) else None
            rig_noise = noise or NoiseConfig.zero()
            rng = _rng_for(scenario.seed, vs.vehicle_id, 0)
            rig = SensorRig(vs.params, rig_noise, rng, self.dt)
            filt = FusionFilter(vs.params, rig_noise.window_s)
            controller, feed, rep = self._make_controller(vs, command_log_loader)
            rt = VehicleRuntime(
                spec=vs, state=state, controller=controller, feed=feed, replay=rep,
                rig=rig, filter=filt, assignment=None,
                command=ActuatorCommand(0.0, 0.0, 0.0),
                encoder_v=0.0, fused_v=round6(vs.start_v), fused_a=0.0,
            )
            self.vehicles[vs.vehicle_id] = rt
            self._win_ticks[vs.vehicle_id] = max(1, round(rig_noise.window_s / self.dt))
        self.vehicle_ids = sorted(self.vehicles)

        self._update_assignments()
        fps = [self._footprint(vid) for vid in self.vehicle_ids]
        if detect_collision_pairs(fps):
            raise ScenarioError("vehicles start in collision")

    # -- construction helpers

    def _make_controller(self, vs: VehicleSpec, log_loader):
        kind = vs.controller["kind"]
        route_rng = _rng_for(self.scenario.seed, vs.vehicle_id, 1)
        if vs.backend.channel.seed is not None:
            chan_rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence([vs.backend.channel.seed, vehicle_hash(vs.vehicle_id)])))
        else:
            chan_rng = _rng_for(self.scenario.seed, vs.vehicle_id, 2)
        if kind == "agent":
            prof = vs.controller.get("profile", "defensive")
            profile = PRESETS[prof] if isinstance(prof, str) else PersonalityProfile.from_obj(prof)
            ctl = AgentController(self.graph, profile, vs.params, vs.start_lane,
                                  vs.start_s, vs.start_v, route_rng)
            # a teleoperated driver: commands transit the uplink channel
            feed = CommandFeed(vs.backend.channel, chan_rng,
                               failsafe_timeout_s=self.failsafe_timeout_s) \
                if not vs.backend.channel.is_zero() else None
            return ctl, feed, None
        if kind == "cruise":
            c = vs.controller
            ctl = CruiseController(self.graph, vs.params, vs.start_lane, vs.start_s,
                                   c["target_speed"], c.get("stop_at_t"),
                                   c.get("stop_decel", 1.0), route_rng)
            return ctl, None, None
        if kind == "external":
            feed = CommandFeed(vs.backend.channel, chan_rng,
                               failsafe_timeout_s=self.failsafe_timeout_s)
            return None, feed, None
        # replay
        if log_loader is None:
            raise ScenarioError(f"vehicle {vs.vehicle_id}: replay needs a command log")
        commands = log_loader(vs.controller)
        if vs.backend.channel.is_zero():
            return None, None, ReplayDirect(commands)
        feed = CommandFeed(vs.backend.channel, chan_rng,
                           failsafe_timeout_s=self.failsafe_timeout_s)
        for i, tick in enumerate(sorted(commands)):
            feed.send((tick - 1) * self.dt, i, commands[tick])
        return None, feed, None

    # -- per-tick pipeline

    def step(self, external_commands: dict | None = None):
        """Advance one physics tick; returns the events emitted this tick."""
        t_old = self.tick * self.dt
        new_tick = self.tick + 1
        t_new = new_tick * self.dt

        if external_commands:
            for vid in external_commands:
                if vid not in self.vehicles:
                    raise UnknownVehicle(vid)

        others_cache = {
            vid: (rt.assignment.lane_id, rt.assignment.s, rt.state.v)
            for vid, rt in self.vehicles.items() if rt.assignment is not None
        }

        prev_assignments = {vid: self.vehicles[vid].assignment for vid in self.vehicle_ids}
        tick_events = []

        for vid in self.vehicle_ids:
            rt = self.vehicles[vid]
            cmd = None
            if external_commands and vid in external_commands:
                c = external_commands[vid]
                cmd = c if isinstance(c, ActuatorCommand) else ActuatorCommand(*c)
            elif rt.replay is not None:
                cmd = rt.replay.command_for_tick(new_tick)
            elif rt.controller is not None:
                others = {k: v for k, v in others_cache.items() if k != vid}
                cmd = rt.controller.command(t_old, vid, rt.state, others,
                                            self._params_by_id, self.dt)
                if rt.feed is not None:  # teleoperated: uplink channel in the loop
                    rt.feed.send(t_old, new_tick, cmd)
                    cmd = rt.feed.poll(t_old)
            elif rt.feed is not None:
                cmd = rt.feed.poll(t_old)
            rt.command = cmd if cmd is not None else rt.command

            prev_v = rt.state.v
            if not rt.frozen:
                if rt.spec.backend.actuation == "pwm":
                    inputs = pwm_to_plant_inputs(command_to_pwm(rt.command, rt.spec.params),
                                                 rt.spec.params)
                else:
                    inputs = direct_plant_inputs(rt.command, rt.spec.params)
                from .vehicle_plant import step_dynamics

                rt.state = step_dynamics(rt.state, inputs, rt.spec.params, self.dt)
            rt.rig.integrate(prev_v, rt.state, t_new)
            if new_tick % self._win_ticks[vid] == 0:
                frame = rt.rig.sample(rt.state, t_new)
                v_hat, a_hat = rt.filter.update(frame)
                rt.last_frame = frame
                rt.encoder_v = encoder_speed(frame.encoder_ticks,
                                             self._win_ticks[vid] * self.dt, rt.spec.params)
                rt.fused_v, rt.fused_a = v_hat, a_hat

        self.tick = new_tick
        self._update_assignments()
        tick_events += self._detect_events(prev_assignments, t_new)
        self.events.extend(tick_events)
        self._record(t_new)
        return tick_events

    def _update_assignments(self):
        for vid in self.vehicle_ids:
            rt = self.vehicles[vid]
            try:
                rt.assignment = locate(self.graph, rt.state.x, rt.state.y, rt.state.theta)
            except OffMap:
                rt.assignment = None

    def _footprint(self, vid):
        rt = self.vehicles[vid]
        return Footprint(vid, rt.state.x, rt.state.y, rt.state.theta,
                         rt.spec.params.body_length, rt.spec.params.track_width)

    def _detect_events(self, prev_assignments, t_new):
        events = []
        # collisions: one event per contact episode per pair; vehicles freeze
        pairs = set(detect_collision_pairs([self._footprint(v) for v in self.vehicle_ids]))
        for pair in sorted(pairs):
            if pair not in self._contact_pairs:
                va, vb = (self.vehicles[p] for p in pair)
                impact = max(va.state.v, vb.state.v)
                events.append(EventRecord("collision", self.tick, pair,
                                          {"impact_speed": round6(impact)}))
                for p in pair:
                    rt = self.vehicles[p]
                    rt.frozen = True
                    rt.state = replace(rt.state, v=0.0, a=0.0)
        self._contact_pairs = pairs

        for vid in self.vehicle_ids:
            rt = self.vehicles[vid]
            prev_a = prev_assignments[vid]
            new_a = rt.assignment
            half = 0.5 * rt.spec.params.body_length

            # off-road on entry
            if new_a is None:
                if vid not in self._offmap:
                    self._offmap.add(vid)
                    events.append(EventRecord("off_road", self.tick, (vid,), {}))
                continue
            self._offmap.discard(vid)
            if prev_a is None:
                continue

            prev_lane = self.graph.lanes[prev_a.lane_id]
            new_lane = self.graph.lanes[new_a.lane_id]

            # lane change between co-directional neighbors
            if (new_a.lane_id != prev_a.lane_id
                    and new_lane.segment_id == prev_lane.segment_id
                    and new_lane.direction == prev_lane.direction
                    and new_lane.k is not None and prev_lane.k is not None
                    and abs(new_lane.k - prev_lane.k) == 1):
                events.append(EventRecord("lane_change", self.tick, (vid,), {
                    "from_lane": prev_a.lane_id, "to_lane": new_a.lane_id,
                }))

            # crossing progress relative to the previous lane's end
            prev_front = prev_a.s + half
            if new_a.lane_id == prev_a.lane_id:
                new_front = new_a.s + half
            elif new_a.lane_id in prev_lane.successors:
                new_front = prev_lane.length + new_a.s + half
            else:
                new_front = None

            if new_front is not None and prev_lane.light is not None:
                stop_s = prev_lane.light.stop_line_s
                if prev_front < stop_s <= new_front:
                    phase = light_state_at(prev_lane.light.schedule, t_new).phase
                    if phase == RED:
                        events.append(EventRecord("red_light_entry", self.tick, (vid,), {
                            "light_id": prev_lane.light.light_id,
                            "speed": round6(rt.state.v),
                        }))

            # stop-sign bookkeeping on the previous lane's signs
            if prev_lane.signs:
                for sign in prev_lane.signs:
                    if sign.kind != "stop":
                        continue
                    key = (prev_a.lane_id, round(sign.s, 6))
                    credit = rt.sign_credit.setdefault(key, {"run": 0.0, "best": 0.0})
                    in_zone = (new_a.lane_id == prev_a.lane_id
                               and 0.0 <= sign.s - (new_a.s + half) <= SIGN_STOP_WINDOW)
                    if in_zone and rt.state.v <= STOPPED_V:
                        credit["run"] += self.dt
                        credit["best"] = max(credit["best"], credit["run"])
                    elif rt.state.v > STOPPED_V:
                        credit["run"] = 0.0
                    if new_front is not None and prev_front < sign.s <= new_front:
                        if rt.state.v > STOPPED_V and credit["best"] < SIGN_MIN_STOP_S:
                            events.append(EventRecord(
                                "stop_sign_violation", self.tick, (vid,), {
                                    "lane_id": prev_a.lane_id, "sign_s": round6(sign.s),
                                    "speed": round6(rt.state.v),
                                }))
                        rt.sign_credit.pop(key, None)
        return events

    def _record(self, t_new):
        for vid in self.vehicle_ids:
            rt = self.vehicles[vid]
            a = rt.assignment
            if a is not None:
                lane = self.graph.lanes[a.lane_id]
                light = lane.light
                light_phase = light_state_at(light.schedule, t_new).phase if light else "none"
                limit = lane.limit_at(a.s)
            self.records.append(TelemetryRecord(
                tick=self.tick, sim_t=round6(t_new), vehicle_id=vid,
                x=round6(rt.state.x), y=round6(rt.state.y), theta=round6(rt.state.theta),
                v=round6(rt.state.v), a=round6(rt.state.a),
                steer_cmd=rt.command.steer, throttle_cmd=rt.command.throttle,
                brake_cmd=rt.command.brake,
                encoder_v=round6(rt.encoder_v), fused_v=round6(rt.fused_v),
                fused_a=round6(rt.fused_a),
                lane_id=a.lane_id if a else "",
                s=round6(a.s) if a else None,
                lateral_offset=round6(a.lateral_offset) if a else None,
                light_ahead=light_phase if a else "none",
                current_limit=round6(limit) if a else None,
            ))

    def configure_backend(self, vehicle_id, backend: BackendDescriptor):
        """Rebind a vehicle's actuation/channel/noise pipeline (session start)."""
        rt = self.vehicles[vehicle_id]
        rt.spec = replace(rt.spec, backend=backend)
        self._params_by_id[vehicle_id] = rt.spec.params
        rt.feed = CommandFeed(backend.channel, _rng_for(self.scenario.seed, vehicle_id, 2),
                              start_t=self.tick * self.dt,
                              failsafe_timeout_s=self.failsafe_timeout_s)
        if backend.noise_on:
            rig_noise = rt.spec.noise if rt.spec.noise is not None else NoiseConfig()
        else:
            rig_noise = NoiseConfig.zero()
        rt.rig = SensorRig(rt.spec.params, rig_noise, _rng_for(self.scenario.seed, vehicle_id, 0),
                           self.dt)
        rt.filter = FusionFilter(rt.spec.params, rig_noise.window_s)
        self._win_ticks[vehicle_id] = max(1, round(rig_noise.window_s / self.dt))

    def estimated_ego(self, vehicle_id):
        """Sensor-derived ego pose: latest overhead capture dead-reckoned to now."""
        rt = self.vehicles[vehicle_id]
        t = self.tick * self.dt
        op = rt.filter.last_overhead
        if op is None:
            st = rt.state
            return {"x": round6(st.x), "y": round6(st.y), "theta": round6(st.theta),
                    "v": round6(rt.fused_v), "a": round6(rt.fused_a)}
        dt_prop = max(0.0, t - op.t_capture)
        yaw = rt.last_frame.imu_yaw_rate if rt.last_frame is not None else 0.0
        theta_mid = op.theta + 0.5 * yaw * dt_prop
        x = op.x + rt.fused_v * dt_prop * math.cos(theta_mid)
        y = op.y + rt.fused_v * dt_prop * math.sin(theta_mid)
        return {"x": round6(x), "y": round6(y), "theta": round6(op.theta + yaw * dt_prop),
                "v": round6(rt.fused_v), "a": round6(rt.fused_a)}

    def client_view(self, vehicle_id):
        """Snapshot dict for the state broadcast (ground truth flavor)."""
        rt = self.vehicles[vehicle_id]
        a = rt.assignment
        lights = []
        if a is not None:
            lane = self.graph.lanes[a.lane_id]
            if lane.light is not None:
                st = light_state_at(lane.light.schedule, self.tick * self.dt)
                lights.append({
                    "light_id": lane.light.light_id, "phase": st.phase,
                    "time_to_change": round6(st.time_to_change),
                })
        others = []
        for vid in self.vehicle_ids:
            if vid == vehicle_id:
                continue
            ort = self.vehicles[vid]
            if math.hypot(ort.state.x - rt.state.x, ort.state.y - rt.state.y) <= 3.0:
                others.append({
                    "vehicle_id": vid, "x": round6(ort.state.x), "y": round6(ort.state.y),
                    "theta": round6(ort.state.theta), "v": round6(ort.state.v),
                })
        return {
            "ego": {
                "x": round6(rt.state.x), "y": round6(rt.state.y),
                "theta": round6(rt.state.theta), "v": round6(rt.state.v),
                "a": round6(rt.state.a),
            },
            "others": others,
            "lights": lights,
            "hud": {
                "lane_id": a.lane_id if a else "",
                "current_limit": round6(self.graph.lanes[a.lane_id].limit_at(a.s)) if a else None,
            },
        }


def step_world(world: World, commands: dict | None, graph=None, dt=None):
    """Spec-shaped stepping entry: returns (world, events for this tick)."""
    events = world.step(commands)
    return world, events


def _replay_loader_factory(base_dir):
    from .telemetry_analytics import read_log

    def load(controller_spec):
        import os

        ref = controller_spec.get("log_ref")
        if not ref:
            raise ScenarioError("replay controller needs a log_ref")
        prefix = ref if os.path.isabs(ref) else os.path.join(base_dir, ref)
        try:
            log = read_log(prefix)
        except OSError as e:
            raise ScenarioError(f"unresolved replay ref {ref!r}: {e}") from None
        source = controller_spec.get("source_vehicle") or log.subject_id
        return {
            r.tick: ActuatorCommand(r.steer_cmd, r.throttle_cmd, r.brake_cmd)
            for r in log.records if r.vehicle_id == source
        }
    return load


def commands_from_log(log: SessionLog, vehicle_id=None) -> dict:
    vid = vehicle_id or log.subject_id
    return {
        r.tick: ActuatorCommand(r.steer_cmd, r.throttle_cmd, r.brake_cmd)
        for r in log.records if r.vehicle_id == vid
    }


def run_headless(scenario: ScenarioSpec, command_logs: dict | None = None,
                 base_dir: str = ".") -> SessionLog:
    """Run a scenario start to finish; the result is a pure function of
    (scenario, seed).

    command_logs optionally maps vehicle_id -> {tick: ActuatorCommand} for
    replay controllers, bypassing log_ref file loading.
    """
    def loader(controller_spec):
        if command_logs is not None and "vehicle" in controller_spec:
            return command_logs[controller_spec["vehicle"]]
        if command_logs is not None and len(command_logs) == 1:
            return next(iter(command_logs.values()))
        return _replay_loader_factory(base_dir)(controller_spec)

    graph = build_scenario_graph(scenario)
    world = World(scenario, graph, command_log_loader=loader)
    n_ticks = int(round(scenario.duration_s / scenario.physics_dt))
    for _ in range(n_ticks):
        world.step()

    subject = scenario.vehicle(scenario.subject_vehicle_id)
    scen_digest = scenario.digest()
    header = {
        "session_id": f"run-{scen_digest[:12]}",
        "scenario": scenario.to_obj(),
        "scenario_digest": scen_digest,
        "map_digest": graph.digest,
        "seed": scenario.seed,
        "backend": subject.backend.to_obj(),
        "driver_label": scenario.driver_label,
        "order_index": scenario.order_index,
        "physics_dt": scenario.physics_dt,
        "subject_vehicle_id": scenario.subject_vehicle_id,
        "created_at": EPOCH_SENTINEL,
        "vehicles": {
            v.vehicle_id: {"params": v.params.to_obj(), "controller_kind": v.controller["kind"]}
            for v in scenario.vehicles
        },
        "route": {
            "start_lane": subject.start_lane,
            "start_s": subject.start_s,
            "duration_s": scenario.duration_s,
        },
    }
    return SessionLog(header=header, records=world.records, events=world.events)


def verify_replay(log: SessionLog):
    """Re-simulate a session from its recorded commands and diff the records.

    Every vehicle is driven tick-aligned by its own recorded command stream
    (channel effects are already baked into those commands); backend binds
    made during a live session are re-applied at their recorded ticks.
    Returns None on a bit-exact match, else a one-line description of the
    first divergence.
    """
    scenario = parse_scenario(log.header["scenario"])
    graph = build_scenario_graph(scenario)
    if graph.digest != log.header["map_digest"]:
        raise DigestMismatch(log.header["map_digest"], graph.digest, what="map")
    if scenario.digest() != log.header["scenario_digest"]:
        raise DigestMismatch(log.header["scenario_digest"], scenario.digest(),
                             what="scenario")

    vehicles = []
    for v in scenario.vehicles:
        backend = BackendDescriptor(kind=v.backend.kind, channel=ZERO_CHANNEL,
                                    actuation=v.backend.actuation,
                                    noise_on=v.backend.noise_on) \
            if v.backend.kind == "mock_physical" else v.backend
        vehicles.append(replace(v, controller={"kind": "replay", "vehicle": v.vehicle_id},
                                backend=backend))
    replay_scenario = replace(scenario, vehicles=vehicles)
    command_logs = {v.vehicle_id: commands_from_log(log, v.vehicle_id)
                    for v in scenario.vehicles}

    def loader(controller_spec):
        return command_logs[controller_spec["vehicle"]]

    binds = {}
    for b in log.header.get("binds", []):
        backend = BackendDescriptor.from_obj(b["backend"])
        backend = BackendDescriptor(kind=backend.kind, channel=ZERO_CHANNEL,
                                    actuation=backend.actuation,
                                    noise_on=backend.noise_on)
        binds.setdefault(b["tick"], []).append((b["vehicle_id"], backend))

    world = World(replay_scenario, graph, command_log_loader=loader)
    n_ticks = max((r.tick for r in log.records),
                  default=int(round(scenario.duration_s / scenario.physics_dt)))
    for _ in range(n_ticks):
        for vid, backend in binds.get(world.tick, ()):
            world.configure_backend(vid, backend)
            world.vehicles[vid].replay = ReplayDirect(command_logs[vid])
            world.vehicles[vid].feed = None
        world.step()

    if len(world.records) != len(log.records):
        return f"record count differs: {len(world.records)} vs {len(log.records)}"
    for got, want in zip(world.records, log.records):
        if got != want:
            for field_name in TELEMETRY_FIELD_NAMES:
                if getattr(got, field_name) != getattr(want, field_name):
                    return (f"first mismatch at tick {want.tick} vehicle "
                            f"{want.vehicle_id}: field {field_name} "
                            f"{getattr(got, field_name)!r} != {getattr(want, field_name)!r}")
    if world.events != log.events:
        n = min(len(world.events), len(log.events))
        for i in range(n):
            if world.events[i] != log.events[i]:
                return f"first event mismatch at index {i}: {world.events[i]} != {log.events[i]}"
        return f"event count differs: {len(world.events)} vs {len(log.events)}"
    return None


TELEMETRY_FIELD_NAMES = [f for f in TelemetryRecord.__dataclass_fields__]


# ---------------------------------------------------------------------------
# canned scenarios

def standard_grid_scenario(profile="defensive", seed=1, duration_s=60.0,
                           vehicle_id="ego") -> ScenarioSpec:
    """The standard 4x3-grid scenario: one agent wandering the city.

    The schedule override shortens amber to suit desk-scale approach speeds;
    vehicle steering range is widened so connector arcs are drivable.
    """
    params = VehicleParams(max_steer=1.2)
    obj = {
        "name": "standard-grid",
        "map": {"grid": {"rows": 4, "cols": 3, "block_length": 1.2,
                         "lane_width": 0.15, "default_limit": 0.6}},
        "duration_s": duration_s,
        "physics_dt": 0.01,
        "seed": seed,
        "schedule_overrides": {
            "ns": {"green_s": 6.0, "amber_s": 0.25, "red_s": 6.25, "offset_s": 0.0},
            "ew": {"green_s": 6.0, "amber_s": 0.25, "red_s": 6.25, "offset_s": 6.25},
        },
        "vehicles": [{
            "vehicle_id": vehicle_id,
            "params": params.to_obj(),
            "noise": "off",
            "start": {"lane_id": "v0-1:F0", "s": 0.2, "v": 0.0},
            "controller": {"kind": "agent", "profile": profile},
        }],
        "subject_vehicle_id": vehicle_id,
    }
    return parse_scenario(obj)


def straight_map_spec(length=60.0, lane_width=0.3, limit=1.0):
    """Two-node single-segment straight road, handy for platoon tests."""
    obj = {
        "name": "straight",
        "scale_denominator": 10,
        "nodes": [
            {"id": "a", "x": 0.0, "y": 0.0},
            {"id": "b", "x": length, "y": 0.0},
        ],
        "segments": [{
            "id": "main", "from_node": "a", "to_node": "b",
            "geometry": {"kind": "straight"}, "lanes_per_direction": 1,
            "lane_width": lane_width, "speed_limit": limit,
        }],
        "schedules": {}, "signals": [], "signs": [],
    }
    return parse_map(canonical_json(obj))
