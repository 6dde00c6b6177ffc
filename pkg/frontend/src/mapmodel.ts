// Minimal client-side map model: enough geometry to draw roads, pick light
// positions, and derive waypoint routes. Parses the canonical map JSON the
// server exposes at /map.json.

export interface MapNode {
  id: string;
  x: number;
  y: number;
}

export interface MapSegment {
  id: string;
  from_node: string;
  to_node: string;
  geometry: { kind: "straight" } | {
    kind: "arc"; center_x: number; center_y: number; clockwise: boolean };
  lanes_per_direction: number;
  lane_width: number;
  speed_limit: number;
}

export interface MapSignal {
  id: string;
  node_id: string;
  approach_segment_id: string;
  schedule_id: string;
}

export interface CityMap {
  name: string;
  nodes: Map<string, MapNode>;
  segments: MapSegment[];
  signals: MapSignal[];
  bounds: { x0: number; y0: number; x1: number; y1: number };
}

export function parseMap(text: string): CityMap {
  const raw = JSON.parse(text);
  const nodes = new Map<string, MapNode>();
  for (const n of raw.nodes) nodes.set(n.id, n);
  const xs = [...nodes.values()].map((n) => n.x);
  const ys = [...nodes.values()].map((n) => n.y);
  return {
    name: raw.name,
    nodes,
    segments: raw.segments,
    signals: raw.signals ?? [],
    bounds: {
      x0: Math.min(...xs), y0: Math.min(...ys),
      x1: Math.max(...xs), y1: Math.max(...ys),
    },
  };
}

export function segmentEndpoints(map: CityMap, seg: MapSegment) {
  const a = map.nodes.get(seg.from_node)!;
  const b = map.nodes.get(seg.to_node)!;
  return { a, b };
}

export function roadWidth(seg: MapSegment): number {
  return 2 * seg.lanes_per_direction * seg.lane_width;
}

/** Stop-line marker position for a signal: on the approach side of its node,
 *  set back by the crossing half-width, offset to the travel lane's side. */
export function signalMarker(map: CityMap, sig: MapSignal) {
  const seg = map.segments.find((s) => s.id === sig.approach_segment_id);
  if (!seg) return null;
  const { a, b } = segmentEndpoints(map, seg);
  const into = sig.node_id === seg.to_node;
  const nx = into ? b : a;
  const fx = into ? a : b;
  const len = Math.hypot(nx.x - fx.x, nx.y - fx.y);
  if (len === 0) return null;
  const ux = (nx.x - fx.x) / len;
  const uy = (nx.y - fx.y) / len;
  const setback = seg.lanes_per_direction * seg.lane_width;
  // right-hand side of travel
  const rx = uy;
  const ry = -ux;
  const off = 0.5 * seg.lane_width + 0.08;
  return {
    x: nx.x - ux * setback + rx * off,
    y: nx.y - uy * setback + ry * off,
  };
}
