"""Session recording, bit-exact log IO, driving-style metrics, cross-backend
comparison, and personality-profile fitting.

A session is a file triplet: <id>.header (canonical JSON), <id>.telemetry.csv
(fixed column order, 6-decimal reals), <id>.events (one JSON object per
line). read_log(write_log(x)) == x bit-exactly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .canonical import canonical_json, fmt_real
from .errors import DigestMismatch, EmptyGrid, EmptyLog, RouteMismatch, SchemaError

TELEMETRY_COLUMNS = [
    "tick", "sim_t", "vehicle_id", "x", "y", "theta", "v", "a",
    "steer_cmd", "throttle_cmd", "brake_cmd", "encoder_v", "fused_v",
    "fused_a", "lane_id", "s", "lateral_offset", "light_ahead", "current_limit",
]

LEADER_WINDOW = 3.0     # m; headway only counted with a leader this close
HEADWAY_MIN_V = 0.05    # m/s
JERK_LP_TAU = 0.1       # s
RESAMPLE_STEP = 0.02    # m, trajectory comparison grid
STD_FLOOR = 1e-9

EPOCH_SENTINEL = "1970-01-01T00:00:00Z"  # deterministic created_at for headless runs


@dataclass(frozen=True)
class TelemetryRecord:
    tick: int
    sim_t: float
    vehicle_id: str
    x: float
    y: float
    theta: float
    v: float
    a: float
    steer_cmd: float
    throttle_cmd: float
    brake_cmd: float
    encoder_v: float
    fused_v: float
    fused_a: float
    lane_id: str
    s: float | None
    lateral_offset: float | None
    light_ahead: str
    current_limit: float | None


@dataclass(frozen=True)
class EventRecord:
    kind: str
    tick: int
    vehicle_ids: tuple
    details: dict

    KINDS = ("collision", "lane_change", "red_light_entry", "off_road",
             "stop_sign_violation")

    def to_obj(self):
        return {
            "kind": self.kind,
            "tick": self.tick,
            "vehicle_ids": list(self.vehicle_ids),
            "details": self.details,
        }

    @classmethod
    def from_obj(cls, obj):
        return cls(obj["kind"], obj["tick"], tuple(obj["vehicle_ids"]), obj["details"])


@dataclass
class SessionLog:
    header: dict
    records: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def physics_dt(self):
        return self.header["physics_dt"]

    @property
    def subject_id(self):
        return self.header["subject_vehicle_id"]

    def vehicle_ids(self):
        return sorted({r.vehicle_id for r in self.records})

    def records_for(self, vehicle_id):
        return [r for r in self.records if r.vehicle_id == vehicle_id]


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return fmt_real(value)
    return str(value)


def _record_row(r: TelemetryRecord) -> str:
    return ",".join([
        str(r.tick), fmt_real(r.sim_t), r.vehicle_id, fmt_real(r.x), fmt_real(r.y),
        fmt_real(r.theta), fmt_real(r.v), fmt_real(r.a), fmt_real(r.steer_cmd),
        fmt_real(r.throttle_cmd), fmt_real(r.brake_cmd), fmt_real(r.encoder_v),
        fmt_real(r.fused_v), fmt_real(r.fused_a), r.lane_id, _cell(r.s),
        _cell(r.lateral_offset), r.light_ahead, _cell(r.current_limit),
    ])


def write_log(log: SessionLog, prefix: str):
    """Write the header/telemetry/events triplet for a session."""
    prev = None
    for r in log.records:
        key = (r.tick, r.vehicle_id)
        if prev is not None and key <= prev:
            raise SchemaError(f"records not sorted at tick {r.tick}, {r.vehicle_id}")
        prev = key
    os.makedirs(os.path.dirname(os.path.abspath(prefix)) or ".", exist_ok=True)
    with open(prefix + ".header", "w", encoding="utf-8") as f:
        f.write(canonical_json(log.header) + "\n")
    with open(prefix + ".telemetry.csv", "w", encoding="utf-8", newline="") as f:
        f.write(",".join(TELEMETRY_COLUMNS) + "\n")
        for r in log.records:
            f.write(_record_row(r) + "\n")
    with open(prefix + ".events", "w", encoding="utf-8") as f:
        for e in log.events:
            f.write(canonical_json(e.to_obj()) + "\n")


def _parse_opt_real(cell):
    return None if cell == "" else float(cell)


def read_log(prefix: str) -> SessionLog:
    """Read a session triplet back; inverse of write_log, bit-exactly."""
    with open(prefix + ".header", "r", encoding="utf-8") as f:
        header = json.loads(f.read())
    records = []
    with open(prefix + ".telemetry.csv", "r", encoding="utf-8") as f:
        head = f.readline().rstrip("\n")
        if head.split(",") != TELEMETRY_COLUMNS:
            raise SchemaError("telemetry column header mismatch")
        prev = None
        for line_no, line in enumerate(f, start=2):
            cells = line.rstrip("\n").split(",")
            if len(cells) != len(TELEMETRY_COLUMNS):
                raise SchemaError(f"line {line_no}: expected {len(TELEMETRY_COLUMNS)} cells")
            r = TelemetryRecord(
                tick=int(cells[0]), sim_t=float(cells[1]), vehicle_id=cells[2],
                x=float(cells[3]), y=float(cells[4]), theta=float(cells[5]),
                v=float(cells[6]), a=float(cells[7]), steer_cmd=float(cells[8]),
                throttle_cmd=float(cells[9]), brake_cmd=float(cells[10]),
                encoder_v=float(cells[11]), fused_v=float(cells[12]),
                fused_a=float(cells[13]), lane_id=cells[14],
                s=_parse_opt_real(cells[15]), lateral_offset=_parse_opt_real(cells[16]),
                light_ahead=cells[17], current_limit=_parse_opt_real(cells[18]),
            )
            key = (r.tick, r.vehicle_id)
            if prev is not None and key <= prev:
                raise SchemaError(f"line {line_no}: records not sorted")
            prev = key
            records.append(r)
    events = []
    with open(prefix + ".events", "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                events.append(EventRecord.from_obj(json.loads(line)))
    return SessionLog(header=header, records=records, events=events)


def check_full_rate(log: SessionLog):
    """Metrics are defined on the full-rate log; decimated logs are rejected."""
    by_vehicle: dict = {}
    for r in log.records:
        by_vehicle.setdefault(r.vehicle_id, []).append(r.tick)
    for vid, ticks in by_vehicle.items():
        for a, b in zip(ticks, ticks[1:]):
            if b != a + 1:
                raise SchemaError(f"vehicle {vid}: telemetry gap between ticks {a} and {b}")


# ---------------------------------------------------------------------------
# style metrics

@dataclass(frozen=True)
class StyleMetrics:
    mean_time_headway: float   # NaN when no leader ticks exist
    p10_time_headway: float
    red_light_entries: int
    stop_sign_violations: int
    frac_time_over_limit: float
    mean_exceedance: float     # NaN when never over limit
    rms_jerk: float
    rms_lane_dev: float
    mean_speed: float
    aggressiveness_index: float

    def to_obj(self):
        def enc(x):
            if isinstance(x, float) and math.isnan(x):
                return None
            return x
        return {
            "mean_time_headway": enc(self.mean_time_headway),
            "p10_time_headway": enc(self.p10_time_headway),
            "red_light_entries": self.red_light_entries,
            "stop_sign_violations": self.stop_sign_violations,
            "frac_time_over_limit": enc(self.frac_time_over_limit),
            "mean_exceedance": enc(self.mean_exceedance),
            "rms_jerk": enc(self.rms_jerk),
            "rms_lane_dev": enc(self.rms_lane_dev),
            "mean_speed": enc(self.mean_speed),
            "aggressiveness_index": enc(self.aggressiveness_index),
        }


# metrics whose z-scores enter the aggressiveness index; headway counts
# negatively (short headways are aggressive)
INDEX_METRICS = [
    ("mean_time_headway", -1.0),
    ("frac_time_over_limit", 1.0),
    ("rms_jerk", 1.0),
    ("red_light_entries", 1.0),
    ("stop_sign_violations", 1.0),
]

FIT_METRICS = [
    "mean_time_headway", "p10_time_headway", "frac_time_over_limit",
    "mean_exceedance", "rms_jerk", "rms_lane_dev", "mean_speed",
    "red_light_entries", "stop_sign_violations",
]


def default_baseline_path():
    return os.path.join(os.path.dirname(__file__), "data", "baseline_v1.json")


def load_baseline(path=None) -> dict:
    with open(path or default_baseline_path(), "r", encoding="utf-8") as f:
        obj = json.load(f)
    return obj["metrics"]


def _headways(log: SessionLog, graph, vehicle_id, body_len_by_id) -> list:
    """Bumper-gap/speed samples for ticks with a close leader, subject moving."""
    by_tick: dict = {}
    for r in log.records:
        by_tick.setdefault(r.tick, {})[r.vehicle_id] = r
    out = []
    for tick in sorted(by_tick):
        rows = by_tick[tick]
        me = rows.get(vehicle_id)
        if me is None or me.lane_id == "" or me.v <= HEADWAY_MIN_V:
            continue
        gap = _lead_gap(graph, me, rows, body_len_by_id)
        if gap is not None and gap <= LEADER_WINDOW:
            out.append(max(gap, 0.0) / me.v)
    return out


def _lead_gap(graph, me, rows, body_len_by_id):
    """Nearest leader's bumper-to-bumper gap along me's lane chain, or None."""
    half_me = 0.5 * body_len_by_id.get(me.vehicle_id, 0.23)
    best = None
    # walk this lane then successors, breadth-first by chain distance
    frontier = [(0.0 - me.s, me.lane_id)]
    seen = set()
    while frontier:
        frontier.sort()
        off, lid = frontier.pop(0)
        if lid in seen or off > LEADER_WINDOW:
            continue
        seen.add(lid)
        for vid in sorted(rows):
            if vid == me.vehicle_id:
                continue
            r = rows[vid]
            if r.lane_id != lid or r.s is None:
                continue
            ahead = off + r.s
            if ahead <= 1e-9:
                continue
            gap = ahead - half_me - 0.5 * body_len_by_id.get(vid, 0.23)
            if best is None or gap < best:
                best = gap
        lane = graph.lanes.get(lid)
        if lane is None:
            break
        for succ in lane.successors:
            frontier.append((off + lane.length, succ))
    return best


def _lowpass(values, dt, tau):
    out = np.empty(len(values))
    acc = values[0] if len(values) else 0.0
    k = dt / (tau + dt)
    for i, v in enumerate(values):
        acc += k * (v - acc)
        out[i] = acc
    return out


def compute_metrics(log: SessionLog, graph, vehicle_id=None, baseline=None) -> StyleMetrics:
    """Per-session driving-style battery for one vehicle (default: subject)."""
    if not log.records:
        raise EmptyLog("no telemetry records")
    if log.header.get("map_digest") and graph.digest != log.header["map_digest"]:
        raise DigestMismatch(log.header["map_digest"], graph.digest, what="map")
    check_full_rate(log)
    vehicle_id = vehicle_id or log.subject_id
    rows = log.records_for(vehicle_id)
    if not rows:
        raise EmptyLog(f"no records for vehicle {vehicle_id!r}")
    dt = log.physics_dt
    body_len = {
        vid: spec.get("params", {}).get("body_length", 0.23)
        for vid, spec in log.header.get("vehicles", {}).items()
    }

    headways = _headways(log, graph, vehicle_id, body_len)
    mean_thw = float(np.mean(headways)) if headways else math.nan
    p10_thw = float(np.percentile(headways, 10)) if headways else math.nan

    red = sum(1 for e in log.events
              if e.kind == "red_light_entry" and vehicle_id in e.vehicle_ids)
    stops = sum(1 for e in log.events
                if e.kind == "stop_sign_violation" and vehicle_id in e.vehicle_ids)

    v = np.array([r.v for r in rows])
    limits = np.array([r.current_limit if r.current_limit is not None else np.inf
                       for r in rows])
    over = v > limits
    frac_over = float(np.mean(over))
    mean_exc = float(np.mean((v - limits)[over])) if over.any() else math.nan

    a = np.array([r.a for r in rows])
    a_smooth = _lowpass(a, dt, JERK_LP_TAU)
    jerk = np.diff(a_smooth) / dt
    rms_jerk = float(np.sqrt(np.mean(jerk ** 2))) if len(jerk) else 0.0

    lat = np.array([r.lateral_offset for r in rows if r.lateral_offset is not None])
    rms_lane = float(np.sqrt(np.mean(lat ** 2))) if len(lat) else math.nan

    mean_speed = float(np.mean(v))

    values = {
        "mean_time_headway": mean_thw,
        "p10_time_headway": p10_thw,
        "frac_time_over_limit": frac_over,
        "mean_exceedance": mean_exc,
        "rms_jerk": rms_jerk,
        "rms_lane_dev": rms_lane,
        "mean_speed": mean_speed,
        "red_light_entries": float(red),
        "stop_sign_violations": float(stops),
    }
    index = aggressiveness_index(values, baseline or load_baseline())
    return StyleMetrics(
        mean_time_headway=mean_thw, p10_time_headway=p10_thw,
        red_light_entries=red, stop_sign_violations=stops,
        frac_time_over_limit=frac_over, mean_exceedance=mean_exc,
        rms_jerk=rms_jerk, rms_lane_dev=rms_lane, mean_speed=mean_speed,
        aggressiveness_index=index,
    )


def aggressiveness_index(values: dict, baseline: dict) -> float:
    """Mean z-score of the index battery; undefined components are skipped."""
    zs = []
    for name, sign in INDEX_METRICS:
        x = values.get(name)
        if x is None or (isinstance(x, float) and math.isnan(x)):
            continue
        stats = baseline[name]
        std = max(stats["std"], STD_FLOOR)
        zs.append(sign * (x - stats["mean"]) / std)
    if not zs:
        return math.nan
    return float(np.mean(zs))


# ---------------------------------------------------------------------------
# cross-backend comparison

@dataclass(frozen=True)
class ComparisonReport:
    metric_deltas: dict        # name -> {"a", "b", "abs", "rel"}
    ks_speed: float
    trajectory_rmse: float

    def to_obj(self):
        return {
            "metric_deltas": self.metric_deltas,
            "ks_speed": self.ks_speed,
            "trajectory_rmse": self.trajectory_rmse,
        }


def ks_statistic(xs, ys) -> float:
    """Two-sample Kolmogorov-Smirnov distance between empirical CDFs."""
    xs = np.sort(np.asarray(xs, dtype=float))
    ys = np.sort(np.asarray(ys, dtype=float))
    if len(xs) == 0 or len(ys) == 0:
        raise EmptyLog("cannot compare empty speed samples")
    grid = np.concatenate([xs, ys])
    fx = np.searchsorted(xs, grid, side="right") / len(xs)
    fy = np.searchsorted(ys, grid, side="right") / len(ys)
    return float(np.max(np.abs(fx - fy)))


def _resampled_path(rows, step=RESAMPLE_STEP):
    pts = np.array([[r.x, r.y] for r in rows])
    if len(pts) < 2:
        return np.zeros(0), pts
    d = np.hypot(*(np.diff(pts, axis=0).T))
    s = np.concatenate([[0.0], np.cumsum(d)])
    grid = np.arange(0.0, s[-1], step)
    x = np.interp(grid, s, pts[:, 0])
    y = np.interp(grid, s, pts[:, 1])
    return grid, np.stack([x, y], axis=1)


def trajectory_rmse(rows_a, rows_b, step=RESAMPLE_STEP) -> float:
    """RMSE of pointwise distance after arc-length resampling both paths."""
    _, pa = _resampled_path(rows_a, step)
    _, pb = _resampled_path(rows_b, step)
    n = min(len(pa), len(pb))
    if n == 0:
        return 0.0
    d = np.hypot(pa[:n, 0] - pb[:n, 0], pa[:n, 1] - pb[:n, 1])
    return float(np.sqrt(np.mean(d ** 2)))


def compare_sessions(a: SessionLog, b: SessionLog, graph, baseline=None) -> ComparisonReport:
    """Juxtapose two sessions of the same route on the same map."""
    if a.header["map_digest"] != b.header["map_digest"]:
        raise DigestMismatch(a.header["map_digest"], b.header["map_digest"], what="map")
    if graph.digest != a.header["map_digest"]:
        raise DigestMismatch(a.header["map_digest"], graph.digest, what="map")
    ra = a.header.get("route", {})
    rb = b.header.get("route", {})
    if ra != rb:
        raise RouteMismatch(f"routes differ: {ra} vs {rb}")
    sa = a.records_for(a.subject_id)
    sb = b.records_for(b.subject_id)
    if not sa or not sb:
        raise EmptyLog("subject has no records")
    ks = ks_statistic([r.v for r in sa], [r.v for r in sb])
    rmse = trajectory_rmse(sa, sb)
    baseline = baseline or load_baseline()
    ma = compute_metrics(a, graph, baseline=baseline).to_obj()
    mb = compute_metrics(b, graph, baseline=baseline).to_obj()
    deltas = {}
    for name in ma:
        va, vb = ma[name], mb[name]
        if va is None or vb is None:
            deltas[name] = {"a": va, "b": vb, "abs": None, "rel": None}
            continue
        diff = vb - va
        deltas[name] = {
            "a": va, "b": vb, "abs": diff,
            "rel": diff / abs(va) if abs(va) > 1e-12 else None,
        }
    return ComparisonReport(metric_deltas=deltas, ks_speed=ks, trajectory_rmse=rmse)


# ---------------------------------------------------------------------------
# profile fitting

def fit_profile(log: SessionLog, scenario, grid: dict, baseline=None,
                base_profile=None) -> dict:
    """Exhaustive grid search for the personality that best mimics a log.

    grid maps PersonalityProfile field names to candidate lists; unlisted
    parameters stay pinned to base_profile. Ties break toward the
    lexicographically smallest parameter tuple.
    """
    from itertools import product

    from .agent_drivers import PersonalityProfile
    from .sim_core import run_headless, scenario_with_profile

    if not grid or any(len(v) == 0 for v in grid.values()):
        raise EmptyGrid("every fitted parameter needs a non-empty candidate list")
    baseline = baseline or load_baseline()
    base = base_profile or PersonalityProfile()
    names = sorted(grid)
    target = compute_metrics(log, _graph_for(scenario), baseline=baseline).to_obj()

    best = None
    for combo in sorted(product(*(sorted(grid[n]) for n in names))):
        profile = PersonalityProfile(**{**base.to_obj(), **dict(zip(names, combo))})
        candidate_scenario = scenario_with_profile(scenario, log.subject_id, profile)
        sim_log = run_headless(candidate_scenario)
        got = compute_metrics(sim_log, _graph_for(scenario), baseline=baseline).to_obj()
        loss = 0.0
        for m in FIT_METRICS:
            a, b = target.get(m), got.get(m)
            if a is None or b is None:
                continue
            scale = max(baseline.get(m, {"std": 1.0})["std"], STD_FLOOR)
            loss += ((b - a) / scale) ** 2
        key = (loss, tuple(profile.as_tuple()))
        if best is None or key < best[0]:
            best = (key, profile, loss)
    return {"profile": best[1], "loss": best[2]}


def _graph_for(scenario):
    from .sim_core import build_scenario_graph

    return build_scenario_graph(scenario)
