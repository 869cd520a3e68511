"""Planar rigid transforms, oriented boxes, rotated IoU and greedy NMS."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "wrap_angle",
    "Pose2",
    "SE2Transform",
    "OrientedBox",
    "se2_compose",
    "se2_invert",
    "se2_relative",
    "se2_embed",
    "box_corners",
    "polygon_area",
    "clip_convex",
    "intersection_area",
    "box_iou",
    "boxes_overlap",
    "nms",
]


def wrap_angle(theta):
    """Map angles to (-pi, pi]. Works on scalars and arrays."""
    wrapped = np.arctan2(np.sin(theta), np.cos(theta))
    # arctan2 returns -pi for sin == -0.0; fold it onto +pi
    wrapped = np.where(wrapped <= -np.pi, np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_transform(self) -> "SE2Transform":
        """Transform mapping points from this pose's local frame into the parent frame."""
        return SE2Transform(self.theta, (self.x, self.y))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class SE2Transform:
    rotation: float
    translation: tuple[float, float] = (0.0, 0.0)

    @classmethod
    def identity(cls) -> "SE2Transform":
        return cls(0.0, (0.0, 0.0))

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return np.array([[c, -s], [s, c]])

    def apply(self, points) -> np.ndarray:
        """Rotate then translate points of shape (..., 2)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix.T + np.asarray(self.translation)

    def apply_pose(self, pose: Pose2) -> Pose2:
        x, y = self.apply([pose.x, pose.y])
        return Pose2(float(x), float(y), pose.theta + self.rotation)

    def apply_box(self, box: "OrientedBox") -> "OrientedBox":
        cx, cy = self.apply(box.center)
        return OrientedBox((float(cx), float(cy)), box.length, box.width, box.heading + self.rotation)


def se2_compose(a: SE2Transform, b: SE2Transform) -> SE2Transform:
    """Return the transform that applies ``b`` first and then ``a``."""
    tx, ty = a.apply(b.translation)
    return SE2Transform(float(wrap_angle(a.rotation + b.rotation)), (float(tx), float(ty)))


def se2_invert(t: SE2Transform) -> SE2Transform:
    c, s = math.cos(t.rotation), math.sin(t.rotation)
    tx, ty = t.translation
    return SE2Transform(float(wrap_angle(-t.rotation)), (-(c * tx + s * ty), s * tx - c * ty))


def se2_relative(reference: Pose2, target: Pose2) -> Pose2:
    """Express ``target`` in the frame of ``reference`` (x axis along its heading)."""
    c, s = math.cos(reference.theta), math.sin(reference.theta)
    dx, dy = target.x - reference.x, target.y - reference.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, target.theta - reference.theta)


def se2_embed(reference: Pose2, local: Pose2) -> Pose2:
    """Inverse of :func:`se2_relative`: map a pose in ``reference``'s frame back out."""
    return reference.as_transform().apply_pose(local)


@dataclass(frozen=True)
class OrientedBox:
    center: tuple[float, float]
    length: float
    width: float
    heading: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"box dimensions must be positive, got {self.length}x{self.width}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def pose(self) -> Pose2:
        return Pose2(self.center[0], self.center[1], self.heading)

    @property
    def area(self) -> float:
        return self.length * self.width

    def corners(self) -> np.ndarray:
        return box_corners(self.center, self.length, self.width, self.heading)


def box_corners(center, length, width, heading) -> np.ndarray:
    """Counter-clockwise corners (4, 2) of a rectangle."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.asarray(center, dtype=float)


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clip``."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inputs, output = output, []
        prev = inputs[-1]
        prev_side = side(prev)
        for cur in inputs:
            cur_side = side(cur)
            if cur_side >= 0:
                if prev_side < 0:
                    output.append(_segment_cross(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0:
                output.append(_segment_cross(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return np.array(output, dtype=float).reshape(-1, 2)


def _segment_cross(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def intersection_area(a: OrientedBox, b: OrientedBox) -> float:
    ra = 0.5 * math.hypot(a.length, a.width)
    rb = 0.5 * math.hypot(b.length, b.width)
    if math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) > ra + rb:
        return 0.0
    return max(polygon_area(clip_convex(a.corners(), b.corners())), 0.0)


def box_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Intersection over union of two oriented rectangles.

    Degenerate (zero-area) boxes have IoU 0 with everything.
    """
    area_a, area_b = a.area, b.area
    if area_a <= 0.0 or area_b <= 0.0:
        return 0.0
    inter = intersection_area(a, b)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def boxes_overlap(a: OrientedBox, b: OrientedBox, tol: float = 1e-6) -> bool:
    """Strict positive-area overlap, ignoring grazing contact below ``tol`` m^2."""
    return intersection_area(a, b) > tol


def nms(candidates: Sequence[tuple[float, OrientedBox]], iou_threshold: float) -> list[tuple[float, OrientedBox]]:
    """Greedy non-maximum suppression, highest score first.

    Equal scores keep their input order, so the lower index wins.
    """
    order = sorted(range(len(candidates)), key=lambda i: -candidates[i][0])
    kept: list[tuple[float, OrientedBox]] = []
    for i in order:
        score, box = candidates[i]
        if all(box_iou(box, other) <= iou_threshold for _, other in kept):
            kept.append((score, box))
    return kept
