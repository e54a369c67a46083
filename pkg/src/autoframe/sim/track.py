"""Closed-loop test track built from line and arc segments.

The centerline is parameterized by arc length ``s`` (wrapped modulo the
total length).  Lateral offsets are signed left-positive with respect to
the direction of travel, so the left lane boundary sits at
``+lane_width/2`` and the right one at ``-lane_width/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .physics import wrap_angle

MIN_CURVE_RADIUS = 15.0
_CLOSURE_TOL = 1e-6


@dataclass(frozen=True)
class LineSegment:
    x0: float
    y0: float
    heading: float
    length: float

    def point(self, s: float) -> tuple[float, float]:
        return (self.x0 + s * math.cos(self.heading),
                self.y0 + s * math.sin(self.heading))

    def direction(self, s: float) -> float:
        return self.heading

    def curvature(self, s: float) -> float:
        return 0.0

    def nearest(self, x: float, y: float) -> tuple[float, float, float]:
        """Return (local s, euclidean distance, signed lateral offset)."""
        dx, dy = math.cos(self.heading), math.sin(self.heading)
        t = (x - self.x0) * dx + (y - self.y0) * dy
        t = max(0.0, min(self.length, t))
        cx, cy = self.x0 + t * dx, self.y0 + t * dy
        ex, ey = x - cx, y - cy
        lateral = dx * ey - dy * ex
        return t, math.hypot(ex, ey), lateral


@dataclass(frozen=True)
class ArcSegment:
    cx: float
    cy: float
    radius: float
    start_angle: float  # angle of the start point as seen from the center
    sweep: float        # signed; positive turns left (counterclockwise)

    @property
    def length(self) -> float:
        return abs(self.sweep) * self.radius

    def _angle(self, s: float) -> float:
        return self.start_angle + math.copysign(1.0, self.sweep) * s / self.radius

    def point(self, s: float) -> tuple[float, float]:
        a = self._angle(s)
        return (self.cx + self.radius * math.cos(a),
                self.cy + self.radius * math.sin(a))

    def direction(self, s: float) -> float:
        return wrap_angle(self._angle(s) + math.copysign(math.pi / 2, self.sweep))

    def curvature(self, s: float) -> float:
        return math.copysign(1.0 / self.radius, self.sweep)

    def nearest(self, x: float, y: float) -> tuple[float, float, float]:
        sign = math.copysign(1.0, self.sweep)
        phi = math.atan2(y - self.cy, x - self.cx)
        t = sign * wrap_angle(phi - self.start_angle)
        if 0.0 <= t <= abs(self.sweep):
            s = t * self.radius
            px, py = self.point(s)
            dist = math.hypot(x - px, y - py)
            r = math.hypot(x - self.cx, y - self.cy)
            lateral = sign * (self.radius - r)
            return s, dist, lateral
        # Off the arc's angular span: clamp to the nearer endpoint.
        best = None
        for s_end in (0.0, self.length):
            px, py = self.point(s_end)
            d = math.hypot(x - px, y - py)
            if best is None or d < best[1]:
                h = self.direction(s_end)
                ex, ey = x - px, y - py
                lateral = math.cos(h) * ey - math.sin(h) * ex
                best = (s_end, d, lateral)
        return best


Segment = LineSegment | ArcSegment


class Track:
    def __init__(self, segments: Sequence[Segment], lane_width: float,
                 marking_width: float = 0.15):
        if not segments:
            raise ValueError("a track needs at least one segment")
        self.segments = tuple(segments)
        self.lane_width = float(lane_width)
        self.marking_width = float(marking_width)
        self._starts = []
        total = 0.0
        for seg in self.segments:
            self._starts.append(total)
            total += seg.length
        self.length = total
        self._check_closed()
        for seg in self.segments:
            if isinstance(seg, ArcSegment) and seg.radius < MIN_CURVE_RADIUS:
                raise ValueError(
                    f"curve radius {seg.radius} below the minimum {MIN_CURVE_RADIUS}")

    def _check_closed(self):
        end = self.point_at(self.length - 1e-12)
        start = self.point_at(0.0)
        gap = math.hypot(end[0] - start[0], end[1] - start[1])
        if gap > 1e-3:
            raise ValueError(f"track is not a closed loop (gap {gap:.6f} m)")

    def _locate(self, s: float) -> tuple[Segment, float]:
        s = s % self.length
        # Linear scan: tracks have a handful of segments.
        for seg, start in zip(reversed(self.segments), reversed(self._starts)):
            if s >= start - _CLOSURE_TOL:
                return seg, min(max(s - start, 0.0), seg.length)
        return self.segments[0], s

    def point_at(self, s: float) -> tuple[float, float]:
        seg, local = self._locate(s)
        return seg.point(local)

    def heading_at(self, s: float) -> float:
        seg, local = self._locate(s)
        return seg.direction(local)

    def curvature_at(self, s: float) -> float:
        seg, local = self._locate(s)
        return seg.curvature(local)

    def offset_point(self, s: float, lateral: float) -> tuple[float, float]:
        """Point displaced left-positive from the centerline."""
        x, y = self.point_at(s)
        h = self.heading_at(s)
        return (x - lateral * math.sin(h), y + lateral * math.cos(h))

    def nearest(self, x: float, y: float) -> tuple[float, float]:
        """Arc-length position and signed lateral offset of the closest
        centerline point."""
        best = None
        for seg, start in zip(self.segments, self._starts):
            local, dist, lateral = seg.nearest(x, y)
            if best is None or dist < best[0]:
                best = (dist, (start + local) % self.length, lateral)
        return best[1], best[2]

    def sample_offset_polyline(self, s0: float, s1: float, step: float,
                               lateral: float) -> np.ndarray:
        """World points (N,3) of a constant-lateral-offset line over [s0, s1]."""
        if s1 <= s0:
            raise ValueError("s1 must exceed s0")
        n = max(2, int(math.ceil((s1 - s0) / step)) + 1)
        ss = np.linspace(s0, s1, n)
        pts = np.empty((n, 3))
        for i, s in enumerate(ss):
            x, y = self.point_at(s)
            h = self.heading_at(s)
            pts[i, 0] = x - lateral * math.sin(h)
            pts[i, 1] = y + lateral * math.cos(h)
            pts[i, 2] = 0.0
        return pts


def stadium_track(straight: float = 100.0, radius: float = 25.0,
                  lane_width: float = 3.5, marking_width: float = 0.15) -> Track:
    """Two straights joined by two half circles, starting at the origin
    heading +x along the lower straight."""
    return Track(
        [
            LineSegment(0.0, 0.0, 0.0, straight),
            ArcSegment(straight, radius, radius, -math.pi / 2, math.pi),
            LineSegment(straight, 2 * radius, math.pi, straight),
            ArcSegment(0.0, radius, radius, math.pi / 2, math.pi),
        ],
        lane_width=lane_width,
        marking_width=marking_width,
    )
