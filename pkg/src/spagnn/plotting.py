"""Dependency-free SVG rendering of PR curves and trajectory rollouts.

Rollouts draw each actor's mean waypoints with 1-sigma covariance ellipses
whose color runs from blue at the first timestep to pink at the last.
Output is deterministic text with no timestamps.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .distributions import MU_X, MU_Y, RHO, SIGMA_X, SIGMA_Y

__all__ = ["time_color", "covariance_ellipse", "pr_svg", "rollout_svg", "compose_svg"]

BLUE = np.array([40, 80, 230])
PINK = np.array([240, 90, 180])


def time_color(k: int, n: int) -> str:
    frac = k / max(n - 1, 1)
    r, g, b = np.rint((1 - frac) * BLUE + frac * PINK).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def covariance_ellipse(state) -> tuple[float, float, float]:
    """Semi-axes and rotation (degrees) of the 1-sigma ellipse of a waypoint state.

    The semi-axes are the square roots of the covariance eigenvalues.
    """
    sx, sy, rho = state[SIGMA_X], state[SIGMA_Y], state[RHO]
    cov = np.array([[sx * sx, rho * sx * sy], [rho * sx * sy, sy * sy]])
    vals, vecs = np.linalg.eigh(cov)
    major = vecs[:, 1]
    return math.sqrt(max(vals[1], 0.0)), math.sqrt(max(vals[0], 0.0)), math.degrees(math.atan2(major[1], major[0]))


def _f(v: float) -> str:
    return f"{v:.2f}"


def pr_svg(precision: Sequence[float], recall: Sequence[float], title: str, size=(320, 240)) -> str:
    w, h = size
    pad = 30
    pts = [(pad + r * (w - 2 * pad), h - pad - p * (h - 2 * pad)) for p, r in zip(precision, recall)]
    path = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
    return (
        f'<g><rect x="0" y="0" width="{w}" height="{h}" fill="white" stroke="#999"/>'
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>'
        f'<text x="{w / 2}" y="{h - 8}" font-size="11" text-anchor="middle">recall</text>'
        f'<text x="8" y="{h / 2}" font-size="11" transform="rotate(-90 8 {h / 2})" text-anchor="middle">precision</text>'
        f'<text x="{w / 2}" y="18" font-size="12" text-anchor="middle">{title}</text>'
        f'<polyline points="{path}" fill="none" stroke="{time_color(0, 2)}" stroke-width="2"/></g>'
    )


def rollout_svg(states: np.ndarray, truth: np.ndarray | None, title: str, size=300, extent: float = 50.0) -> str:
    """One scene: ``states`` (N, T, 7) in the scene frame, ``truth`` (L, T, 3) or None."""
    scale = size / (2 * extent)

    def xy(x, y):
        return size / 2 + x * scale, size / 2 - y * scale

    parts = [f'<g><rect x="0" y="0" width="{size}" height="{size}" fill="white" stroke="#999"/>']
    parts.append(f'<text x="{size / 2}" y="16" font-size="12" text-anchor="middle">{title}</text>')
    if truth is not None:
        for fut in truth:
            pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in (xy(x, y) for x, y, _ in fut))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="#888" stroke-dasharray="3,2"/>')
    for actor in states:
        T = len(actor)
        for k, s in enumerate(actor):
            cx, cy = xy(s[MU_X], s[MU_Y])
            a, b, ang = covariance_ellipse(s)
            col = time_color(k, T)
            parts.append(
                f'<ellipse cx="{_f(cx)}" cy="{_f(cy)}" rx="{_f(a * scale)}" ry="{_f(b * scale)}" '
                f'transform="rotate({_f(-ang)} {_f(cx)} {_f(cy)})" fill="{col}" fill-opacity="0.15" stroke="{col}"/>'
            )
            parts.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="1.5" fill="{col}"/>')
    parts.append("</g>")
    return "".join(parts)


def compose_svg(panels: Sequence[tuple[str, int, int]], columns: int = 3, gap: int = 10) -> str:
    """Tile ``(svg_group, width, height)`` panels into one document."""
    cell_w = max(w for _, w, _ in panels)
    cell_h = max(h for _, _, h in panels)
    rows = math.ceil(len(panels) / columns)
    W = columns * (cell_w + gap) + gap
    H = rows * (cell_h + gap) + gap
    body = []
    for i, (g, _, _) in enumerate(panels):
        x = gap + (i % columns) * (cell_w + gap)
        y = gap + (i // columns) * (cell_h + gap)
        body.append(f'<g transform="translate({x},{y})">{g}</g>')
    return f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">' + "".join(body) + "</svg>\n"
