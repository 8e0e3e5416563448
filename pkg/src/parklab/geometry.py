"""Planar geometry shared by the simulator and the planner.

Oriented rectangles are (cx, cy, heading, length, width) with `length`
along the heading axis. All angles are radians unless noted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]; in-range values pass through exactly."""
    if -math.pi < a <= math.pi:
        return a
    a = (a + math.pi) % TWO_PI - math.pi
    if a == -math.pi:
        a = math.pi
    return a


def angle_diff(a: float, b: float) -> float:
    """Signed smallest difference a - b, in (-pi, pi]."""
    return normalize_angle(a - b)


def axis_angle_diff(a: float, b: float) -> float:
    """Unsigned heading difference treating a and a+pi as the same axis.

    Used for slot alignment: a slot does not distinguish nose-in from
    back-in. Result in [0, pi/2].
    """
    d = abs(normalize_angle(a - b))
    return min(d, math.pi - d)


@dataclass(frozen=True)
class OrientedRect:
    cx: float
    cy: float
    heading: float
    length: float  # extent along heading
    width: float   # extent across heading

    def corners(self) -> np.ndarray:
        """4x2 corner array, counter-clockwise."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def contains_point(self, x: float, y: float) -> bool:
        """Closed containment test."""
        dx, dy = x - self.cx, y - self.cy
        c, s = math.cos(self.heading), math.sin(self.heading)
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return abs(u) <= 0.5 * self.length and abs(v) <= 0.5 * self.width

    def contains_points(self, xy: np.ndarray) -> np.ndarray:
        """Vectorized closed containment for an (N, 2) array."""
        d = xy - np.array([self.cx, self.cy])
        c, s = math.cos(self.heading), math.sin(self.heading)
        u = d[:, 0] * c + d[:, 1] * s
        v = -d[:, 0] * s + d[:, 1] * c
        return (np.abs(u) <= 0.5 * self.length) & (np.abs(v) <= 0.5 * self.width)

    def aabb(self) -> tuple[float, float, float, float]:
        cs = self.corners()
        return cs[:, 0].min(), cs[:, 1].min(), cs[:, 0].max(), cs[:, 1].max()


def rects_intersect(a: OrientedRect, b: OrientedRect) -> bool:
    """Separating-axis test between two closed oriented rectangles.

    Touching (shared boundary point) counts as intersecting.
    """
    ca, cb = a.corners(), b.corners()
    # Cheap circle reject first.
    ra = 0.5 * math.hypot(a.length, a.width)
    rb = 0.5 * math.hypot(b.length, b.width)
    if math.hypot(b.cx - a.cx, b.cy - a.cy) > ra + rb:
        return False
    for heading in (a.heading, b.heading):
        c, s = math.cos(heading), math.sin(heading)
        for ax, ay in ((c, s), (-s, c)):
            pa = ca[:, 0] * ax + ca[:, 1] * ay
            pb = cb[:, 0] * ax + cb[:, 1] * ay
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def rect_rect_separation(a: OrientedRect, b: OrientedRect) -> float:
    """Minimum distance between two rectangle boundaries (0 if overlapping)."""
    if rects_intersect(a, b):
        return 0.0
    ca, cb = a.corners(), b.corners()
    best = math.inf
    for pa, pb in ((ca, cb), (cb, ca)):
        for i in range(4):
            p1, p2 = pa[i], pa[(i + 1) % 4]
            for j in range(4):
                best = min(best, _point_segment_dist(pb[j], p1, p2))
    return best


def _point_segment_dist(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    d = p - (a + t * ab)
    return float(math.hypot(d[0], d[1]))


def world_to_frame(x: float, y: float, frame_x: float, frame_y: float,
                   frame_heading: float) -> tuple[float, float]:
    """Express a world point in the frame at (frame_x, frame_y, frame_heading)."""
    dx, dy = x - frame_x, y - frame_y
    c, s = math.cos(frame_heading), math.sin(frame_heading)
    return dx * c + dy * s, -dx * s + dy * c


def frame_to_world(u: float, v: float, frame_x: float, frame_y: float,
                   frame_heading: float) -> tuple[float, float]:
    """Inverse of world_to_frame."""
    c, s = math.cos(frame_heading), math.sin(frame_heading)
    return frame_x + u * c - v * s, frame_y + u * s + v * c
