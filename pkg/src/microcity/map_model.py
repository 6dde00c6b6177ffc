"""Lane-level road network: native map format, grid generator, graph builder.

The map file is canonical JSON (sorted keys, 6-decimal reals) with top-level
keys name, scale_denominator, nodes, segments, schedules, signals, signs.
build_graph turns a validated MapSpec into an immutable MapGraph of
arc-length-parameterized lanes joined by auto-generated connector arcs at
every node, plus per-lane lights, signs, and speed-limit profiles.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field

from .canonical import canonical_json, digest_of
from .errors import (
    GeometryError,
    InvalidValue,
    MalformedMap,
    OffMap,
    UnresolvedReference,
)
from .geometry import ArcSeg, LineSeg, Polycurve, Pose, angle_diff, wrap_angle
from .traffic_infra import LightPhaseSchedule

HEADING_PENALTY = 0.1  # m per rad of heading mismatch in locate()
OFFMAP_FACTOR = 3.0    # locate fails beyond this many lane widths
CONTINUITY_TOL = 1e-6  # m / rad for successor pose agreement

DIR_FWD = "fwd"
DIR_REV = "rev"
DIR_CONN = "conn"


# ---------------------------------------------------------------------------
# spec model

@dataclass
class NodeSpec:
    id: str
    x: float
    y: float


@dataclass
class SegmentSpec:
    id: str
    from_node: str
    to_node: str
    geometry: dict  # {"kind": "straight"} | {"kind": "arc", "center_x", "center_y", "clockwise"}
    lanes_per_direction: int
    lane_width: float
    speed_limit: float
    speed_limit_changes: list = field(default_factory=list)  # [{"s": m, "new_limit": m/s}]


@dataclass
class SignalSpec:
    id: str
    node_id: str
    approach_segment_id: str
    schedule_id: str


@dataclass
class SignSpec:
    kind: str  # "stop" | "yield"
    segment_id: str
    s: float


@dataclass
class MapSpec:
    name: str
    scale_denominator: int
    nodes: list
    segments: list
    schedules: dict  # schedule_id -> LightPhaseSchedule
    signals: list
    signs: list

    def to_obj(self):
        return {
            "name": self.name,
            "scale_denominator": self.scale_denominator,
            "nodes": [{"id": n.id, "x": n.x, "y": n.y} for n in self.nodes],
            "segments": [
                {
                    "id": s.id,
                    "from_node": s.from_node,
                    "to_node": s.to_node,
                    "geometry": s.geometry,
                    "lanes_per_direction": s.lanes_per_direction,
                    "lane_width": s.lane_width,
                    "speed_limit": s.speed_limit,
                    "speed_limit_changes": [
                        {"s": c["s"], "new_limit": c["new_limit"]}
                        for c in s.speed_limit_changes
                    ],
                }
                for s in self.segments
            ],
            "schedules": {k: v.to_obj() for k, v in self.schedules.items()},
            "signals": [
                {
                    "id": g.id,
                    "node_id": g.node_id,
                    "approach_segment_id": g.approach_segment_id,
                    "schedule_id": g.schedule_id,
                }
                for g in self.signals
            ],
            "signs": [{"kind": g.kind, "segment_id": g.segment_id, "s": g.s} for g in self.signs],
        }

    def digest(self) -> str:
        return digest_of(self.to_obj())


def serialize_map(spec: MapSpec) -> str:
    """Canonical map-file text for a MapSpec."""
    return canonical_json(spec.to_obj()) + "\n"


# ---------------------------------------------------------------------------
# parsing

_TOP_KEYS = {"name", "scale_denominator", "nodes", "segments", "schedules", "signals", "signs"}


def _require(obj, keys, where, optional=()):
    if not isinstance(obj, dict):
        raise MalformedMap(f"{where} must be an object")
    unknown = set(obj) - set(keys) - set(optional)
    if unknown:
        raise MalformedMap(f"unknown key {sorted(unknown)[0]!r} in {where}")
    for k in keys:
        if k not in obj:
            raise MalformedMap(f"missing key {k!r} in {where}")


def _real(obj, key, where):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(float(v)):
        raise InvalidValue(f"{where}.{key}", f"must be a finite number, got {v!r}")
    return float(v)


def _positive(obj, key, where):
    v = _real(obj, key, where)
    if v <= 0:
        raise InvalidValue(f"{where}.{key}", f"must be > 0, got {v}")
    return v


def _pos_int(obj, key, where):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
        raise InvalidValue(f"{where}.{key}", f"must be a positive integer, got {v!r}")
    return v


def parse_map(text: str) -> MapSpec:
    """Parse and validate map-file contents into a MapSpec."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedMap(e.msg, line=e.lineno) from None
    _require(raw, _TOP_KEYS, "map")
    if not isinstance(raw["name"], str):
        raise InvalidValue("name", "must be a string")
    scale = raw["scale_denominator"]
    if isinstance(scale, bool) or not isinstance(scale, int) or scale <= 0:
        raise InvalidValue("scale_denominator", f"must be a positive integer, got {scale!r}")
    for key in ("nodes", "segments", "signals", "signs"):
        if not isinstance(raw[key], list):
            raise MalformedMap(f"{key} must be a list")
    if not isinstance(raw["schedules"], dict):
        raise MalformedMap("schedules must be an object keyed by schedule id")

    nodes = []
    seen_nodes = set()
    for i, n in enumerate(raw["nodes"]):
        where = f"nodes[{i}]"
        _require(n, ("id", "x", "y"), where)
        if not isinstance(n["id"], str) or not n["id"]:
            raise InvalidValue(f"{where}.id", "must be a non-empty string")
        if n["id"] in seen_nodes:
            raise InvalidValue(f"{where}.id", f"duplicate node id {n['id']!r}")
        seen_nodes.add(n["id"])
        nodes.append(NodeSpec(n["id"], _real(n, "x", where), _real(n, "y", where)))

    schedules = {}
    for sid, sch in raw["schedules"].items():
        where = f"schedules[{sid!r}]"
        _require(sch, ("green_s", "amber_s", "red_s", "offset_s"), where)
        try:
            schedules[sid] = LightPhaseSchedule(
                _real(sch, "green_s", where),
                _real(sch, "amber_s", where),
                _real(sch, "red_s", where),
                _real(sch, "offset_s", where),
            )
        except InvalidValue as e:
            raise InvalidValue(f"{where}.{e.field}", e.reason) from None

    segments = []
    seen_segments = set()
    for i, s in enumerate(raw["segments"]):
        where = f"segments[{i}]"
        _require(
            s,
            ("id", "from_node", "to_node", "geometry", "lanes_per_direction",
             "lane_width", "speed_limit"),
            where,
            optional=("speed_limit_changes",),
        )
        if s["id"] in seen_segments:
            raise InvalidValue(f"{where}.id", f"duplicate segment id {s['id']!r}")
        seen_segments.add(s["id"])
        for ref in (s["from_node"], s["to_node"]):
            if ref not in seen_nodes:
                raise UnresolvedReference(ref, context=f"{where} ({s['id']})")
        geom = s["geometry"]
        if not isinstance(geom, dict) or geom.get("kind") not in ("straight", "arc"):
            raise InvalidValue(f"{where}.geometry", "kind must be 'straight' or 'arc'")
        if geom["kind"] == "arc":
            _require(geom, ("kind", "center_x", "center_y", "clockwise"), f"{where}.geometry")
            if not isinstance(geom["clockwise"], bool):
                raise InvalidValue(f"{where}.geometry.clockwise", "must be a boolean")
            geom = {
                "kind": "arc",
                "center_x": _real(geom, "center_x", f"{where}.geometry"),
                "center_y": _real(geom, "center_y", f"{where}.geometry"),
                "clockwise": geom["clockwise"],
            }
        else:
            _require(geom, ("kind",), f"{where}.geometry")
        changes = []
        for j, c in enumerate(s.get("speed_limit_changes", [])):
            cw = f"{where}.speed_limit_changes[{j}]"
            _require(c, ("s", "new_limit"), cw)
            changes.append({"s": _real(c, "s", cw), "new_limit": _positive(c, "new_limit", cw)})
        changes.sort(key=lambda c: c["s"])
        segments.append(
            SegmentSpec(
                id=s["id"],
                from_node=s["from_node"],
                to_node=s["to_node"],
                geometry=geom,
                lanes_per_direction=_pos_int(s, "lanes_per_direction", where),
                lane_width=_positive(s, "lane_width", where),
                speed_limit=_positive(s, "speed_limit", where),
                speed_limit_changes=changes,
            )
        )

    signals = []
    for i, g in enumerate(raw["signals"]):
        where = f"signals[{i}]"
        _require(g, ("id", "node_id", "approach_segment_id", "schedule_id"), where)
        if g["node_id"] not in seen_nodes:
            raise UnresolvedReference(g["node_id"], context=where)
        if g["approach_segment_id"] not in seen_segments:
            raise UnresolvedReference(g["approach_segment_id"], context=where)
        if g["schedule_id"] not in schedules:
            raise UnresolvedReference(g["schedule_id"], context=where)
        signals.append(SignalSpec(g["id"], g["node_id"], g["approach_segment_id"], g["schedule_id"]))

    signs = []
    for i, g in enumerate(raw["signs"]):
        where = f"signs[{i}]"
        _require(g, ("kind", "segment_id", "s"), where)
        if g["kind"] not in ("stop", "yield"):
            raise InvalidValue(f"{where}.kind", "must be 'stop' or 'yield'")
        if g["segment_id"] not in seen_segments:
            raise UnresolvedReference(g["segment_id"], context=where)
        signs.append(SignSpec(g["kind"], g["segment_id"], _real(g, "s", where)))

    spec = MapSpec(raw["name"], scale, nodes, segments, schedules, signals, signs)
    _validate_placements(spec)
    return spec


def _segment_axis_length(spec: MapSpec, seg: SegmentSpec, nodes_by_id) -> float:
    a = nodes_by_id[seg.from_node]
    b = nodes_by_id[seg.to_node]
    if seg.geometry["kind"] == "straight":
        L = math.hypot(b.x - a.x, b.y - a.y)
        if L <= 0:
            raise GeometryError(f"segment {seg.id}: coincident endpoints")
        return L
    cx, cy = seg.geometry["center_x"], seg.geometry["center_y"]
    r1 = math.hypot(a.x - cx, a.y - cy)
    r2 = math.hypot(b.x - cx, b.y - cy)
    if abs(r1 - r2) > 1e-6 or r1 <= 0:
        raise GeometryError(f"segment {seg.id}: endpoints not on a common circle")
    a1 = math.atan2(a.y - cy, a.x - cx)
    a2 = math.atan2(b.y - cy, b.x - cx)
    sweep = _arc_sweep(a1, a2, seg.geometry["clockwise"])
    return r1 * abs(sweep)


def _arc_sweep(a1: float, a2: float, clockwise: bool) -> float:
    d = wrap_angle(a2 - a1)
    if clockwise:
        return d - 2 * math.pi if d >= 0 else d
    return d + 2 * math.pi if d <= 0 else d


def _validate_placements(spec: MapSpec):
    nodes_by_id = {n.id: n for n in spec.nodes}
    lengths = {s.id: _segment_axis_length(spec, s, nodes_by_id) for s in spec.segments}
    for s in spec.segments:
        for c in s.speed_limit_changes:
            if not (0 <= c["s"] <= lengths[s.id]):
                raise InvalidValue(
                    f"segments[{s.id}].speed_limit_changes.s",
                    f"{c['s']} outside [0, {lengths[s.id]:.6f}]",
                )
    for g in spec.signs:
        if not (0 <= g.s <= lengths[g.segment_id]):
            raise InvalidValue("signs.s", f"{g.s} outside [0, {lengths[g.segment_id]:.6f}]")


# ---------------------------------------------------------------------------
# grid generator

DEFAULT_SCHEDULE = LightPhaseSchedule(8.0, 2.0, 10.0, 0.0)


def generate_grid(rows: int, cols: int, block_length: float, lane_width: float,
                  default_limit: float) -> MapSpec:
    """A rows x cols intersection grid with bidirectional single-lane roads.

    Every approach of every interior intersection gets a signal; the two
    signal axes share one cycle, phase-shifted by green+amber so crossing
    approaches are never simultaneously green.
    """
    if rows < 2 or cols < 2:
        raise InvalidValue("rows/cols", "grid needs at least 2 rows and 2 columns")
    if lane_width <= 0:
        raise InvalidValue("lane_width", "must be > 0")
    if block_length <= 2 * lane_width:
        raise InvalidValue("block_length", f"must exceed 2*lane_width = {2 * lane_width}")
    if default_limit <= 0:
        raise InvalidValue("default_limit", "must be > 0")

    nodes = [
        NodeSpec(f"n{r}-{c}", c * block_length, r * block_length)
        for r in range(rows)
        for c in range(cols)
    ]
    segments = []

    def seg(sid, a, b):
        segments.append(
            SegmentSpec(
                id=sid, from_node=a, to_node=b, geometry={"kind": "straight"},
                lanes_per_direction=1, lane_width=lane_width, speed_limit=default_limit,
            )
        )

    for r in range(rows):
        for c in range(cols - 1):
            seg(f"h{r}-{c}", f"n{r}-{c}", f"n{r}-{c + 1}")
    for r in range(rows - 1):
        for c in range(cols):
            seg(f"v{r}-{c}", f"n{r}-{c}", f"n{r + 1}-{c}")

    interior = [
        (r, c) for r in range(1, rows - 1) for c in range(1, cols - 1)
    ]
    schedules = {}
    signals = []
    if interior:
        g, a, rd = DEFAULT_SCHEDULE.green_s, DEFAULT_SCHEDULE.amber_s, DEFAULT_SCHEDULE.red_s
        schedules["ns"] = LightPhaseSchedule(g, a, rd, 0.0)
        schedules["ew"] = LightPhaseSchedule(g, a, rd, g + a)
        for r, c in interior:
            node = f"n{r}-{c}"
            approaches = [
                ("w", f"h{r}-{c - 1}", "ew"),
                ("e", f"h{r}-{c}", "ew"),
                ("s", f"v{r - 1}-{c}", "ns"),
                ("n", f"v{r}-{c}", "ns"),
            ]
            for tag, seg_id, sched in approaches:
                signals.append(SignalSpec(f"sig-{node}-{tag}", node, seg_id, sched))

    return MapSpec(
        name=f"grid-{rows}x{cols}",
        scale_denominator=10,
        nodes=nodes,
        segments=segments,
        schedules=schedules,
        signals=signals,
        signs=[],
    )


# ---------------------------------------------------------------------------
# built graph

@dataclass
class Light:
    light_id: str
    lane_id: str
    stop_line_s: float
    schedule: LightPhaseSchedule


@dataclass
class LaneSign:
    kind: str
    s: float


class Lane:
    """One directed, arc-length-parameterized lane."""

    __slots__ = (
        "lane_id", "segment_id", "direction", "width", "centerline", "length",
        "successors", "limit_breaks", "_limit_positions", "light", "signs", "k",
    )

    def __init__(self, lane_id, segment_id, direction, width, centerline,
                 limit_breaks, k=None):
        self.lane_id = lane_id
        self.segment_id = segment_id
        self.direction = direction
        self.width = width
        self.centerline = centerline
        self.length = centerline.length
        self.successors = []
        self.limit_breaks = limit_breaks  # [(s, limit)], s ascending, first at 0.0
        self._limit_positions = [b[0] for b in limit_breaks]
        self.light = None
        self.signs = []
        self.k = k  # lane index outward from the road axis; None for connectors

    def limit_at(self, s: float) -> float:
        i = bisect.bisect_right(self._limit_positions, s) - 1
        return self.limit_breaks[max(i, 0)][1]

    def pose_at(self, s: float) -> Pose:
        return self.centerline.pose_at(s)


@dataclass
class LaneAssignment:
    lane_id: str
    s: float
    lateral_offset: float


class MapGraph:
    """Immutable lane graph; safe for unrestricted concurrent reads."""

    CELL = 0.5  # spatial-index cell size, m

    def __init__(self, spec, lanes, lights, digest):
        self.spec = spec
        self.lanes = lanes  # lane_id -> Lane, insertion-ordered by lane_id
        self.lane_ids = sorted(lanes)
        self.lights = lights
        self.lights_by_lane = {lt.lane_id: lt for lt in lights}
        self.digest = digest
        self.max_width = max((l.width for l in lanes.values()), default=0.15)
        self._index = {}
        self._bbox = {}
        self._limit_static = {}
        for lid, lane in lanes.items():
            x0, y0, x1, y1 = lane.centerline.bounds()
            pad = OFFMAP_FACTOR * lane.width + 1e-6
            self._bbox[lid] = (x0 - pad, y0 - pad, x1 + pad, y1 + pad)
            for cx in range(int(math.floor((x0 - pad) / self.CELL)),
                            int(math.floor((x1 + pad) / self.CELL)) + 1):
                for cy in range(int(math.floor((y0 - pad) / self.CELL)),
                                int(math.floor((y1 + pad) / self.CELL)) + 1):
                    self._index.setdefault((cx, cy), []).append(lid)
        for cell in self._index.values():
            cell.sort()

    def candidate_lanes(self, x: float, y: float):
        return self._index.get((int(math.floor(x / self.CELL)), int(math.floor(y / self.CELL))), ())

    def bbox_excludes(self, lane_id, x, y):
        x0, y0, x1, y1 = self._bbox[lane_id]
        return x < x0 or x > x1 or y < y0 or y > y1


def locate(graph: MapGraph, x: float, y: float, heading: float) -> LaneAssignment:
    """Assign a pose to the best-matching lane.

    Score is centerline distance plus a heading-mismatch penalty of
    0.1 m/rad; ties go to the lexicographically smallest lane_id. Raises
    OffMap when no lane is within 3 lane widths.
    """
    best = None
    best_score = math.inf
    for lid in graph.candidate_lanes(x, y):
        if graph.bbox_excludes(lid, x, y):
            continue
        lane = graph.lanes[lid]
        s, lat, dist = lane.centerline.project(x, y)
        if dist > OFFMAP_FACTOR * lane.width:
            continue
        dh = abs(angle_diff(heading, lane.centerline.heading_at(s)))
        score = dist + HEADING_PENALTY * dh
        if score < best_score - 1e-9:
            best = LaneAssignment(lid, s, lat)
            best_score = score
    if best is None:
        raise OffMap(f"no lane within {OFFMAP_FACTOR} widths of ({x:.3f}, {y:.3f})")
    return best


# ---------------------------------------------------------------------------
# graph construction

def _offset_path(seg: SegmentSpec, a: NodeSpec, b: NodeSpec, offset: float,
                 cut_start: float, cut_end: float):
    """Centerline for one direction of a segment, offset right of travel.

    offset > 0 displaces to the right of the travel direction; cut_start and
    cut_end trim arc length off the ends (intersection setbacks).
    """
    kind = seg.geometry["kind"]
    if kind == "straight":
        ux = b.x - a.x
        uy = b.y - a.y
        L = math.hypot(ux, uy)
        ux, uy = ux / L, uy / L
        # right of travel = direction rotated -90 degrees
        rx, ry = uy, -ux
        p0 = (a.x + rx * offset + ux * cut_start, a.y + ry * offset + uy * cut_start)
        p1 = (b.x + rx * offset - ux * cut_end, b.y + ry * offset - uy * cut_end)
        if L - cut_start - cut_end <= 1e-9:
            raise GeometryError(
                f"segment {seg.id}: length {L:.3f} too short for intersection setbacks"
            )
        return Polycurve([LineSeg(p0, p1)])
    cx, cy = seg.geometry["center_x"], seg.geometry["center_y"]
    cw = seg.geometry["clockwise"]
    a1 = math.atan2(a.y - cy, a.x - cx)
    a2 = math.atan2(b.y - cy, b.x - cx)
    sweep = _arc_sweep(a1, a2, cw)
    base_r = math.hypot(a.x - cx, a.y - cy)
    # CCW travel: right side is radially outward; CW: inward
    r = base_r + offset if sweep > 0 else base_r - offset
    if r <= 0:
        raise GeometryError(f"segment {seg.id}: lane offset exceeds arc radius")
    # setbacks trim equal ANGLE at the axis radius so that opposite-direction
    # lane ends stay on one ray from the center (keeps U-turns symmetric)
    trim0 = cut_start / base_r
    trim1 = cut_end / base_r
    if abs(sweep) - trim0 - trim1 <= 1e-9 / base_r:
        raise GeometryError(f"segment {seg.id}: arc too short for intersection setbacks")
    sign = 1.0 if sweep > 0 else -1.0
    return Polycurve([ArcSeg((cx, cy), r, a1 + sign * trim0, sweep - sign * (trim0 + trim1))])


def _reverse_geometry(seg: SegmentSpec) -> SegmentSpec:
    """The same segment traversed to_node -> from_node."""
    geom = seg.geometry
    if geom["kind"] == "arc":
        geom = dict(geom, clockwise=not geom["clockwise"])
    return SegmentSpec(
        id=seg.id, from_node=seg.to_node, to_node=seg.from_node, geometry=geom,
        lanes_per_direction=seg.lanes_per_direction, lane_width=seg.lane_width,
        speed_limit=seg.speed_limit, speed_limit_changes=seg.speed_limit_changes,
    )


def _limit_profile(seg: SegmentSpec, axis_len: float):
    """Step profile of the posted limit along the segment axis: [(s, v)]."""
    prof = [(0.0, seg.speed_limit)]
    for c in seg.speed_limit_changes:
        if c["new_limit"] != prof[-1][1]:
            prof.append((c["s"], c["new_limit"]))
    return prof


def _lane_breaks_forward(profile, start: float, length: float):
    def value_at(u):
        v = profile[0][1]
        for s, nv in profile:
            if s <= u:
                v = nv
        return v

    breaks = [(0.0, value_at(start))]
    for s, v in profile:
        ls = s - start
        if 0.0 < ls <= length and v != breaks[-1][1]:
            breaks.append((ls, v))
    return breaks


def _lane_breaks_reverse(profile, start_u: float, length: float):
    """Breaks for travel from axis coordinate start_u downward."""
    def value_at(u):
        v = profile[0][1]
        for s, nv in profile:
            if s <= u:
                v = nv
        return v

    breaks = [(0.0, value_at(start_u))]
    # crossing axis position s (from above) switches to the value below s
    for i in range(len(profile) - 1, 0, -1):
        s_i = profile[i][0]
        prev_v = profile[i - 1][1]
        ls = start_u - s_i
        if 0.0 < ls <= length and prev_v != breaks[-1][1]:
            breaks.append((ls, prev_v))
    breaks.sort(key=lambda b: b[0])
    dedup = [breaks[0]]
    for b in breaks[1:]:
        if b[1] != dedup[-1][1]:
            dedup.append(b)
    return dedup


def build_graph(spec: MapSpec) -> MapGraph:
    """Build the lane graph: offset lanes, connector arcs, lights, signs."""
    nodes_by_id = {n.id: n for n in spec.nodes}
    segs_by_id = {s.id: s for s in spec.segments}
    axis_len = {s.id: _segment_axis_length(spec, s, nodes_by_id) for s in spec.segments}

    # intersection setback per node: half-width of the widest incident road
    incident: dict = {n.id: [] for n in spec.nodes}
    for s in spec.segments:
        incident[s.from_node].append(s)
        incident[s.to_node].append(s)
    setback = {
        nid: max((s.lanes_per_direction * s.lane_width for s in segs), default=0.0)
        for nid, segs in incident.items()
    }

    lanes: dict = {}
    # directed through lanes; k counts outward from the road axis
    arrivals: dict = {n.id: [] for n in spec.nodes}    # lane ids ending at node
    departures: dict = {n.id: [] for n in spec.nodes}  # lane ids starting at node
    lane_k = {}
    for seg in spec.segments:
        profile = _limit_profile(seg, axis_len[seg.id])
        for direction in (DIR_FWD, DIR_REV):
            if direction == DIR_FWD:
                a, b = nodes_by_id[seg.from_node], nodes_by_id[seg.to_node]
                g = seg
            else:
                g = _reverse_geometry(seg)
                a, b = nodes_by_id[g.from_node], nodes_by_id[g.to_node]
            cut0, cut1 = setback[a.id], setback[b.id]
            for k in range(seg.lanes_per_direction):
                offset = (k + 0.5) * seg.lane_width
                lane_id = f"{seg.id}:{'F' if direction == DIR_FWD else 'R'}{k}"
                path = _offset_path(g, a, b, offset, cut0, cut1)
                if direction == DIR_FWD:
                    breaks = _lane_breaks_forward(profile, cut0, path.length)
                else:
                    breaks = _lane_breaks_reverse(profile, axis_len[seg.id] - cut0, path.length)
                lane = Lane(lane_id, seg.id, direction, seg.lane_width, path, breaks, k=k)
                lanes[lane_id] = lane
                arrivals[b.id].append(lane_id)
                departures[a.id].append(lane_id)
                lane_k[lane_id] = k

    # connectors: same lane index in -> out, one per (arrival, departure) pair
    for nid in sorted(arrivals):
        for in_id in sorted(arrivals[nid]):
            in_lane = lanes[in_id]
            end = in_lane.centerline.end_pose()
            for out_id in sorted(departures[nid]):
                out_lane = lanes[out_id]
                if lane_k[in_id] != lane_k[out_id]:
                    continue
                start = out_lane.centerline.start_pose()
                try:
                    piece = _connector_piece(end, start)
                except GeometryError as e:
                    raise GeometryError(
                        f"node {nid}: cannot connect {in_id} -> {out_id}: {e}"
                    ) from None
                conn_id = f"@{nid}:{in_id}>{out_id}"
                conn = Lane(
                    conn_id, f"@{nid}", DIR_CONN,
                    min(in_lane.width, out_lane.width), Polycurve([piece]),
                    [(0.0, out_lane.limit_at(0.0))],
                )
                conn.successors = [out_id]
                lanes[conn_id] = conn
                in_lane.successors.append(conn_id)
        for in_id in sorted(arrivals[nid]):
            lanes[in_id].successors.sort()

    lanes = {lid: lanes[lid] for lid in sorted(lanes)}

    # lights: a signal governs all lanes of its approach segment directed at its node
    lights = []
    for sig in spec.signals:
        seg = segs_by_id[sig.approach_segment_id]
        sched = spec.schedules[sig.schedule_id]
        if sig.node_id == seg.to_node:
            want = DIR_FWD
        elif sig.node_id == seg.from_node:
            want = DIR_REV
        else:
            raise UnresolvedReference(
                sig.node_id, context=f"signal {sig.id}: segment {seg.id} does not touch node"
            )
        for lane in lanes.values():
            if lane.segment_id == seg.id and lane.direction == want:
                light = Light(sig.id, lane.lane_id, lane.length, sched)
                if lane.light is not None:
                    raise InvalidValue(f"signals[{sig.id}]", f"lane {lane.lane_id} governed twice")
                lane.light = light
                lights.append(light)

    _check_crossing_greens(spec, lanes, lights, nodes_by_id, segs_by_id)

    # signs: mapped onto both directions where the axis position falls inside the lane
    for sign in spec.signs:
        seg = segs_by_id[sign.segment_id]
        cut_from = setback[seg.from_node]
        cut_to = setback[seg.to_node]
        for lane in lanes.values():
            if lane.segment_id != seg.id:
                continue
            if lane.direction == DIR_FWD:
                ls = sign.s - cut_from
            elif lane.direction == DIR_REV:
                ls = (axis_len[seg.id] - cut_from) - sign.s
            else:
                continue
            if 0.0 <= ls <= lane.length:
                lane.signs.append(LaneSign(sign.kind, ls))
    for lane in lanes.values():
        lane.signs.sort(key=lambda g: g.s)

    graph = MapGraph(spec, lanes, lights, spec.digest())
    _check_continuity(graph)
    return graph


def _connector_piece(end: Pose, start: Pose):
    from .geometry import fit_connector

    return fit_connector(end, start)


def _check_continuity(graph: MapGraph):
    for lane in graph.lanes.values():
        end = lane.centerline.end_pose()
        for succ_id in lane.successors:
            succ = graph.lanes[succ_id]
            if not end.close_to(succ.centerline.start_pose(), CONTINUITY_TOL, CONTINUITY_TOL):
                raise GeometryError(
                    f"successor continuity broken: {lane.lane_id} -> {succ_id}"
                )


def _check_crossing_greens(spec, lanes, lights, nodes_by_id, segs_by_id):
    """Crossing approaches at one node must never be simultaneously green."""
    from .traffic_infra import green_intervals_disjoint

    by_node: dict = {}
    for sig in spec.signals:
        by_node.setdefault(sig.node_id, []).append(sig)
    for nid, sigs in by_node.items():
        for i in range(len(sigs)):
            for j in range(i + 1, len(sigs)):
                si, sj = sigs[i], sigs[j]
                di = _approach_heading(spec, si, nodes_by_id, segs_by_id)
                dj = _approach_heading(spec, sj, nodes_by_id, segs_by_id)
                if abs(math.cos(di - dj)) > 0.7:
                    continue  # same or opposite approach axis
                if not green_intervals_disjoint(
                    spec.schedules[si.schedule_id], spec.schedules[sj.schedule_id]
                ):
                    raise InvalidValue(
                        f"signals[{si.id}/{sj.id}]",
                        f"crossing approaches at node {nid} can be green together",
                    )


def _approach_heading(spec, sig, nodes_by_id, segs_by_id):
    seg = segs_by_id[sig.approach_segment_id]
    a = nodes_by_id[seg.from_node]
    b = nodes_by_id[seg.to_node]
    if sig.node_id == seg.from_node:
        a, b = b, a
    return math.atan2(b.y - a.y, b.x - a.x)
