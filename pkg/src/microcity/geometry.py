"""Planar curve primitives with exact arc-length parameterization.

Lane centerlines are sequences of line segments and circular arcs. All
queries (point, tangent, projection) are closed-form, which keeps locate()
deterministic and lets tests check the arc-length property analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import GeometryError

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a > math.pi:
        a -= TWO_PI
    elif a <= -math.pi:
        a += TWO_PI
    return a


def angle_diff(a: float, b: float) -> float:
    """Smallest signed angle a - b, in (-pi, pi]."""
    return wrap_angle(a - b)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float

    def close_to(self, other: "Pose", pos_tol=1e-6, ang_tol=1e-6) -> bool:
        return (
            math.hypot(self.x - other.x, self.y - other.y) <= pos_tol
            and abs(angle_diff(self.heading, other.heading)) <= ang_tol
        )


class LineSeg:
    """Straight piece from p0 to p1."""

    __slots__ = ("x0", "y0", "ux", "uy", "length", "_heading")

    def __init__(self, p0, p1):
        self.x0, self.y0 = p0
        dx = p1[0] - p0[0]
        dy = p1[1] - p0[1]
        self.length = math.hypot(dx, dy)
        if self.length <= 0.0:
            raise GeometryError("zero-length line segment")
        self.ux = dx / self.length
        self.uy = dy / self.length
        self._heading = math.atan2(self.uy, self.ux)

    def point_at(self, s):
        return (self.x0 + self.ux * s, self.y0 + self.uy * s)

    def heading_at(self, s):
        return self._heading

    def project(self, x, y):
        """Closest point: (s, signed_lateral, distance), s clamped to [0, length]."""
        rx = x - self.x0
        ry = y - self.y0
        s = rx * self.ux + ry * self.uy
        s = 0.0 if s < 0.0 else (self.length if s > self.length else s)
        px = self.x0 + self.ux * s
        py = self.y0 + self.uy * s
        lat = self.ux * (y - py) - self.uy * (x - px)
        return s, lat, math.hypot(x - px, y - py)


class ArcSeg:
    """Circular arc; positive sweep is counterclockwise (left turn)."""

    __slots__ = ("cx", "cy", "radius", "a0", "sweep", "length")

    def __init__(self, center, radius, a0, sweep):
        if radius <= 0.0:
            raise GeometryError(f"arc radius must be positive, got {radius}")
        if sweep == 0.0:
            raise GeometryError("zero-sweep arc")
        self.cx, self.cy = center
        self.radius = radius
        self.a0 = a0
        self.sweep = sweep
        self.length = abs(sweep) * radius

    def _angle_at(self, s):
        return self.a0 + math.copysign(s / self.radius, self.sweep)

    def point_at(self, s):
        a = self._angle_at(s)
        return (self.cx + self.radius * math.cos(a), self.cy + self.radius * math.sin(a))

    def heading_at(self, s):
        a = self._angle_at(s)
        return wrap_angle(a + math.copysign(math.pi / 2.0, self.sweep))

    def project(self, x, y):
        a = math.atan2(y - self.cy, x - self.cx)
        # closest on-arc parameter: unwrap relative to a0 in sweep direction
        rel = wrap_angle(a - self.a0)
        if self.sweep >= 0.0:
            if rel < 0.0:
                rel += TWO_PI
            s = rel * self.radius
        else:
            if rel > 0.0:
                rel -= TWO_PI
            s = -rel * self.radius
        if s > self.length:
            # beyond either end: pick the nearer endpoint
            ex, ey = self.point_at(self.length)
            sx, sy = self.point_at(0.0)
            d_end = math.hypot(ex - x, ey - y)
            d_start = math.hypot(sx - x, sy - y)
            s = self.length if d_end <= d_start else 0.0
        px, py = self.point_at(s)
        h = self.heading_at(s)
        ux, uy = math.cos(h), math.sin(h)
        lat = ux * (y - py) - uy * (x - px)
        return s, lat, math.hypot(x - px, y - py)


class Polycurve:
    """Arc-length-parameterized chain of line and arc pieces."""

    def __init__(self, pieces):
        if not pieces:
            raise GeometryError("empty polycurve")
        self.pieces = pieces
        self.offsets = []
        total = 0.0
        for p in pieces:
            self.offsets.append(total)
            total += p.length
        self.length = total

    def _locate_piece(self, s):
        if s <= 0.0:
            return self.pieces[0], 0.0
        if s >= self.length:
            return self.pieces[-1], self.pieces[-1].length
        lo, hi = 0, len(self.pieces) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.offsets[mid] <= s:
                lo = mid
            else:
                hi = mid - 1
        return self.pieces[lo], s - self.offsets[lo]

    def point_at(self, s):
        piece, ps = self._locate_piece(s)
        return piece.point_at(ps)

    def heading_at(self, s):
        piece, ps = self._locate_piece(s)
        return piece.heading_at(ps)

    def pose_at(self, s) -> Pose:
        x, y = self.point_at(s)
        return Pose(x, y, self.heading_at(s))

    def start_pose(self) -> Pose:
        return self.pose_at(0.0)

    def end_pose(self) -> Pose:
        return self.pose_at(self.length)

    def project(self, x, y):
        """Closest point over all pieces: (s, signed_lateral, distance).

        distance is euclidean to the nearest centerline point; it exceeds
        |signed_lateral| only when the query lies beyond a clamped end.
        """
        best = None
        for piece, off in zip(self.pieces, self.offsets):
            s, lat, d = piece.project(x, y)
            if best is None or d < best[2]:
                best = (off + s, lat, d)
        return best

    def bounds(self):
        """Axis-aligned bounding box (xmin, ymin, xmax, ymax), exact for lines, padded for arcs."""
        xs, ys = [], []
        for p in self.pieces:
            if isinstance(p, LineSeg):
                xs += [p.x0, p.point_at(p.length)[0]]
                ys += [p.y0, p.point_at(p.length)[1]]
            else:
                xs += [p.cx - p.radius, p.cx + p.radius]
                ys += [p.cy - p.radius, p.cy + p.radius]
        return min(xs), min(ys), max(xs), max(ys)


def fit_connector(start: Pose, end: Pose, pos_tol=1e-9, ang_tol=1e-9):
    """Fit a tangent-continuous piece from one pose to another.

    Returns a LineSeg when the poses are collinear and aligned, otherwise the
    unique circular arc tangent to the start heading that reaches the end
    pose. Raises GeometryError when no single line/arc satisfies both poses.
    """
    dx = end.x - start.x
    dy = end.y - start.y
    chord = math.hypot(dx, dy)
    if chord <= pos_tol:
        raise GeometryError("connector endpoints coincide")
    hx, hy = math.cos(start.heading), math.sin(start.heading)
    cross = hx * dy - hy * dx
    dot = hx * dx + hy * dy
    if abs(cross) <= 1e-12 * max(1.0, chord):
        if dot <= 0.0:
            raise GeometryError("connector would run backwards")
        if abs(angle_diff(end.heading, start.heading)) > ang_tol:
            raise GeometryError("collinear connector with mismatched headings")
        return LineSeg((start.x, start.y), (end.x, end.y))
    # circle tangent to start heading through both endpoints
    alpha = math.atan2(cross, dot)  # signed angle heading -> chord
    radius = chord / (2.0 * abs(math.sin(alpha)))
    sweep = 2.0 * alpha  # CCW positive
    side = 1.0 if sweep > 0.0 else -1.0
    cx = start.x - hy * radius * side
    cy = start.y + hx * radius * side
    a0 = math.atan2(start.y - cy, start.x - cx)
    arc = ArcSeg((cx, cy), radius, a0, sweep)
    got = arc.heading_at(arc.length)
    endpoint = arc.point_at(arc.length)
    if math.hypot(endpoint[0] - end.x, endpoint[1] - end.y) > 1e-6:
        raise GeometryError("no tangent arc reaches the end pose")
    if abs(angle_diff(got, end.heading)) > 1e-6:
        raise GeometryError("tangent arc cannot match the end heading")
    return arc
