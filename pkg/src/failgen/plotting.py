"""Deterministic SVG rendering of failure trajectories.

Trajectories live in relative-position space (intruder minus ego), so the
intersection is drawn centered on the ego as a spatial reference.  Each
trajectory is one faint connective polyline plus per-step segments colored by
a time ramp.  Identical inputs produce byte-identical documents.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

VIEW = 1.3           # world half-window
SIZE = 720           # pixels
RAMP = ((31, 119, 180), (214, 39, 40))   # early -> late


def _px(v):
    return (v + VIEW) / (2.0 * VIEW) * SIZE


def _pt(x, y):
    # y flips: SVG y grows downward
    return f"{_px(x):.2f},{_px(-y):.2f}"


def _ramp_color(f):
    (r0, g0, b0), (r1, g1, b1) = RAMP
    r = round(r0 + (r1 - r0) * f)
    g = round(g0 + (g1 - g0) * f)
    b = round(b0 + (b1 - b0) * f)
    return f"#{r:02x}{g:02x}{b:02x}"


def _intersection_outline(lane_width: float) -> list[str]:
    b = lane_width  # box half-size: two lanes per road
    parts = ['<g stroke="#999999" stroke-width="1.5" fill="none">']
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            # road edge corner pieces: from window edge to the box corner
            parts.append(f'<path d="M {_pt(sx * VIEW, sy * b)} '
                         f'L {_pt(sx * b, sy * b)} L {_pt(sx * b, sy * VIEW)}"/>')
    parts.append("</g>")
    parts.append('<g stroke="#cccccc" stroke-width="1" stroke-dasharray="6,6">')
    for c in (0.0,):
        parts.append(f'<line x1="{_px(-VIEW):.2f}" y1="{_px(c):.2f}" '
                     f'x2="{_px(-b):.2f}" y2="{_px(c):.2f}"/>')
        parts.append(f'<line x1="{_px(b):.2f}" y1="{_px(c):.2f}" '
                     f'x2="{_px(VIEW):.2f}" y2="{_px(c):.2f}"/>')
        parts.append(f'<line x1="{_px(c):.2f}" y1="{_px(-VIEW):.2f}" '
                     f'x2="{_px(c):.2f}" y2="{_px(-b):.2f}"/>')
        parts.append(f'<line x1="{_px(c):.2f}" y1="{_px(b):.2f}" '
                     f'x2="{_px(c):.2f}" y2="{_px(VIEW):.2f}"/>')
    parts.append("</g>")
    return parts


def render_trajectories(trajectories, lane_width: float = 0.04,
                        max_trajectories: int = 200) -> str:
    """Build the SVG document for relative-position trajectories [T, 2]."""
    trajectories = list(trajectories)[:max_trajectories]
    if not trajectories:
        raise ValueError("render_trajectories: no trajectories given")
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" '
             f'height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">',
             f'<rect width="{SIZE}" height="{SIZE}" fill="#ffffff"/>']
    parts.extend(_intersection_outline(lane_width))
    for idx, traj in enumerate(trajectories):
        pts = np.asarray(traj, dtype=np.float64)
        parts.append(f'<g data-traj="{idx}">')
        chain = " ".join(_pt(x, y) for x, y in pts)
        parts.append(f'<polyline points="{chain}" fill="none" '
                     'stroke="#bbbbbb" stroke-width="0.6" stroke-opacity="0.5"/>')
        n = len(pts) - 1
        for i in range(n):
            color = _ramp_color(i / max(n - 1, 1))
            parts.append(f'<line x1="{_px(pts[i, 0]):.2f}" '
                         f'y1="{_px(-pts[i, 1]):.2f}" '
                         f'x2="{_px(pts[i + 1, 0]):.2f}" '
                         f'y2="{_px(-pts[i + 1, 1]):.2f}" '
                         f'stroke="{color}" stroke-width="1.2" '
                         'stroke-opacity="0.75"/>')
        parts.append("</g>")
    parts.append(f'<circle cx="{_px(0.0):.2f}" cy="{_px(0.0):.2f}" r="3" '
                 'fill="#000000"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_plot(trajectories, path: str | Path, lane_width: float = 0.04,
              max_trajectories: int = 200) -> None:
    doc = render_trajectories(trajectories, lane_width, max_trajectories)
    with open(path, "w") as f:
        f.write(doc)
