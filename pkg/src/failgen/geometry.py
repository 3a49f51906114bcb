"""Intersection road geometry: branches, turn routes, arc-length parameterization.

World frame: x east, y north, intersection center at the origin.  Each of the
four road branches has one inbound and one outbound lane (right-hand traffic),
so the intersection box spans [-lane_width, lane_width] in both axes.  Routes
are chains of line and circular-arc segments parameterized by arc length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum


class Branch(IntEnum):
    SOUTH = 0
    WEST = 1
    NORTH = 2
    EAST = 3

    @classmethod
    def parse(cls, name: str) -> "Branch":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown branch {name!r}; expected one of "
                             f"{[b.name.lower() for b in cls]}") from None


class Turn(IntEnum):
    LEFT = 1
    STRAIGHT = 2
    RIGHT = 3


# successive entries are -90 degree rotations of the previous one
_CYCLE = [Branch.SOUTH, Branch.WEST, Branch.NORTH, Branch.EAST]
_ROT = {Branch.SOUTH: 0.0, Branch.WEST: -math.pi / 2,
        Branch.NORTH: math.pi, Branch.EAST: math.pi / 2}


def destination(branch: Branch, turn: Turn) -> Branch:
    return _CYCLE[(_CYCLE.index(branch) + int(turn)) % 4]


def _wrap(a: float) -> float:
    """Wrap angle to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass
class LineSeg:
    x0: float
    y0: float
    hx: float   # unit heading
    hy: float
    length: float

    def point(self, t):
        return self.x0 + self.hx * t, self.y0 + self.hy * t

    def heading(self, t):
        return math.atan2(self.hy, self.hx)

    def rotated(self, phi):
        c, s = math.cos(phi), math.sin(phi)
        return LineSeg(c * self.x0 - s * self.y0, s * self.x0 + c * self.y0,
                       c * self.hx - s * self.hy, s * self.hx + c * self.hy, self.length)

    def project(self, px, py):
        """Return (t, squared lateral distance) of the closest point."""
        t = (px - self.x0) * self.hx + (py - self.y0) * self.hy
        t = min(max(t, 0.0), self.length)
        fx, fy = self.point(t)
        return t, (px - fx) ** 2 + (py - fy) ** 2


@dataclass
class ArcSeg:
    cx: float
    cy: float
    radius: float
    theta0: float
    sweep: float   # signed; positive is counter-clockwise

    @property
    def length(self):
        return self.radius * abs(self.sweep)

    def _theta(self, t):
        return self.theta0 + math.copysign(t / self.radius, self.sweep)

    def point(self, t):
        th = self._theta(t)
        return self.cx + self.radius * math.cos(th), self.cy + self.radius * math.sin(th)

    def heading(self, t):
        return self._theta(t) + math.copysign(math.pi / 2, self.sweep)

    def rotated(self, phi):
        c, s = math.cos(phi), math.sin(phi)
        return ArcSeg(c * self.cx - s * self.cy, s * self.cx + c * self.cy,
                      self.radius, self.theta0 + phi, self.sweep)

    def project(self, px, py):
        dx, dy = px - self.cx, py - self.cy
        theta = math.atan2(dy, dx)
        u = _wrap(theta - self.theta0)
        if self.sweep >= 0.0:
            t = min(max(u, 0.0), self.sweep) * self.radius
        else:
            t = min(max(-u, 0.0), -self.sweep) * self.radius
        fx, fy = self.point(t)
        return t, (px - fx) ** 2 + (py - fy) ** 2


class Route:
    """Arc-length parameterized path: approach -> intersection connector -> exit."""

    def __init__(self, branch: Branch, turn: Turn, segments, box_entry_s: float,
                 box_exit_s: float):
        self.branch = branch
        self.turn = turn
        self.segments = segments
        self.starts = []
        s = 0.0
        for seg in segments:
            self.starts.append(s)
            s += seg.length
        self.total_length = s
        self.box_entry_s = box_entry_s
        self.box_exit_s = box_exit_s

    def _locate(self, s):
        s = min(max(s, 0.0), self.total_length)
        for i in range(len(self.segments) - 1, -1, -1):
            if s >= self.starts[i] - 1e-12:
                return self.segments[i], s - self.starts[i]
        return self.segments[0], 0.0

    def position(self, s):
        seg, t = self._locate(s)
        return seg.point(t)

    def heading(self, s):
        seg, t = self._locate(s)
        return seg.heading(t)

    def project(self, px, py):
        """Closest route point to (px, py): (arc length, lateral distance)."""
        best_s, best_d2 = 0.0, math.inf
        for seg, start in zip(self.segments, self.starts):
            t, d2 = seg.project(px, py)
            if d2 < best_d2:
                best_s, best_d2 = start + t, d2
        return best_s, math.sqrt(best_d2)


def build_route(branch: Branch, turn: Turn, lane_width: float,
                approach_length: float, exit_length: float) -> Route:
    """Construct the route entering from `branch` and taking `turn`.

    Built in the canonical south-entry frame, then rotated into place.
    """
    h = lane_width / 2.0          # inbound lane center offset
    box = lane_width              # half-size of the intersection square

    approach = LineSeg(h, -box - approach_length, 0.0, 1.0, approach_length)
    if turn is Turn.STRAIGHT:
        connector = LineSeg(h, -box, 0.0, 1.0, 2.0 * box)
        exit_start, exit_heading = (h, box), (0.0, 1.0)
    elif turn is Turn.RIGHT:
        connector = ArcSeg(box, -box, box - h, math.pi, -math.pi / 2)
        exit_start, exit_heading = (box, -h), (1.0, 0.0)
    else:
        connector = ArcSeg(-box, -box, box + h, 0.0, math.pi / 2)
        exit_start, exit_heading = (-box, h), (-1.0, 0.0)
    exit_seg = LineSeg(exit_start[0], exit_start[1], exit_heading[0], exit_heading[1],
                       exit_length)

    phi = _ROT[branch]
    segments = [seg.rotated(phi) for seg in (approach, connector, exit_seg)]
    return Route(branch, turn, segments, box_entry_s=approach_length,
                 box_exit_s=approach_length + connector.length)


_ROUTE_CACHE: dict[tuple, Route] = {}


def route_for(branch: Branch, turn: Turn, lane_width: float, approach_length: float,
              exit_length: float) -> Route:
    key = (branch, turn, lane_width, approach_length, exit_length)
    r = _ROUTE_CACHE.get(key)
    if r is None:
        r = _ROUTE_CACHE[key] = build_route(branch, turn, lane_width,
                                            approach_length, exit_length)
    return r


def rect_corners(cx, cy, heading, length, width):
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    return [(cx + c * dx - s * dy, cy + s * dx + c * dy)
            for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))]


def _interval(corners, ax, ay):
    lo = hi = corners[0][0] * ax + corners[0][1] * ay
    for x, y in corners[1:]:
        p = x * ax + y * ay
        if p < lo:
            lo = p
        elif p > hi:
            hi = p
    return lo, hi


def _seg_seg_dist2(p1, p2, q1, q2):
    """Squared distance between segments [p1,p2] and [q1,q2]."""
    ux, uy = p2[0] - p1[0], p2[1] - p1[1]
    vx, vy = q2[0] - q1[0], q2[1] - q1[1]
    wx, wy = p1[0] - q1[0], p1[1] - q1[1]
    a = ux * ux + uy * uy
    b = ux * vx + uy * vy
    c = vx * vx + vy * vy
    d = ux * wx + uy * wy
    e = vx * wx + vy * wy
    den = a * c - b * b
    if den > 1e-18:
        s = min(max((b * e - c * d) / den, 0.0), 1.0)
    else:
        s = 0.0
    t = (b * s + e) / c if c > 1e-18 else 0.0
    t = min(max(t, 0.0), 1.0)
    # re-clamp s for the clamped t
    if a > 1e-18:
        s = min(max((b * t - d) / a, 0.0), 1.0)
    dx = p1[0] + ux * s - (q1[0] + vx * t)
    dy = p1[1] + uy * s - (q1[1] + vy * t)
    return dx * dx + dy * dy


def rect_distance(a_pose, b_pose, length, width, length_b=None, width_b=None):
    """Euclidean separation of two oriented rectangles; 0 iff they overlap or touch.

    Poses are (cx, cy, heading).  Rectangle b defaults to a's dimensions.
    """
    lb = length if length_b is None else length_b
    wb = width if width_b is None else width_b
    ca = rect_corners(a_pose[0], a_pose[1], a_pose[2], length, width)
    cb = rect_corners(b_pose[0], b_pose[1], b_pose[2], lb, wb)

    # separating-axis overlap test on both rectangles' edge normals
    overlap = True
    for (x1, y1), (x2, y2) in (((ca[0]), (ca[1])), ((ca[1]), (ca[2])),
                               ((cb[0]), (cb[1])), ((cb[1]), (cb[2]))):
        ax, ay = x2 - x1, y2 - y1
        lo_a, hi_a = _interval(ca, ax, ay)
        lo_b, hi_b = _interval(cb, ax, ay)
        if hi_a < lo_b or hi_b < lo_a:
            overlap = False
            break
    if overlap:
        return 0.0

    best = math.inf
    for i in range(4):
        p1, p2 = ca[i], ca[(i + 1) % 4]
        for j in range(4):
            d2 = _seg_seg_dist2(p1, p2, cb[j], cb[(j + 1) % 4])
            if d2 < best:
                best = d2
    return math.sqrt(best)
