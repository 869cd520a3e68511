"""Detection and forecasting metrics.

* Average precision from greedy score-ordered matching with all-point
  interpolation of the precision envelope.
* Centroid L2 (cm) and absolute heading error (degrees) of true positives,
  taken at the highest score threshold whose recall reaches the operating
  recall.
* Collision rate: the per-mille share of predicted trajectories whose box
  overlaps another actor's box of the same scene, at the same timestep,
  anywhere inside a time window.

CSV reports carry one row per (variant, horizon) with the header in
:data:`REPORT_COLUMNS`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import OrientedBox, box_iou, boxes_overlap, wrap_angle

__all__ = [
    "MatchResult",
    "MetricsReport",
    "REPORT_COLUMNS",
    "match_detections",
    "precision_recall",
    "average_precision",
    "match_and_pr",
    "evaluate_detections",
    "operating_point",
    "displacement_metrics",
    "collision_rate",
    "write_report_csv",
    "read_report_csv",
]

REPORT_COLUMNS = (
    "variant",
    "horizon_s",
    "map",
    "operating_recall",
    "l2_cm",
    "heading_deg",
    "collision_0_1s_permille",
    "collision_0_3s_permille",
    "nll",
)


@dataclass
class MatchResult:
    """``detection_label[i]`` is the label matched to detection ``i`` (or -1)."""

    detection_label: np.ndarray
    label_matched: np.ndarray
    iou_threshold: float

    @property
    def true_positive(self) -> np.ndarray:
        return self.detection_label >= 0


def match_detections(scores: Sequence[float], boxes: Sequence[OrientedBox], labels: Sequence[OrientedBox], iou_threshold: float = 0.5) -> MatchResult:
    """One-to-one greedy matching in descending score order (stable for ties)."""
    scores = np.asarray(scores, dtype=float)
    det_label = np.full(len(boxes), -1, dtype=np.int64)
    matched = np.zeros(len(labels), dtype=bool)
    for i in np.argsort(-scores, kind="stable"):
        best, best_iou = -1, iou_threshold
        for k, lb in enumerate(labels):
            if matched[k]:
                continue
            iou = box_iou(boxes[i], lb)
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = k, iou
        if best >= 0:
            det_label[i] = best
            matched[best] = True
    return MatchResult(det_label, matched, iou_threshold)


def precision_recall(scores, true_positive, n_labels: int) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall after each detection in descending score order."""
    scores = np.asarray(scores, dtype=float)
    order = np.argsort(-scores, kind="stable")
    tp = np.asarray(true_positive, dtype=float)[order]
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(tp) + 1)
    recall = ctp / n_labels if n_labels > 0 else np.zeros_like(ctp)
    return precision, recall


def average_precision(precision: np.ndarray, recall: np.ndarray) -> float:
    """Area under the precision envelope, summed over every recall step."""
    if len(precision) == 0:
        return 0.0
    envelope = np.maximum.accumulate(np.asarray(precision)[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def match_and_pr(scores, boxes, labels, iou_threshold: float = 0.5):
    """Matching, PR samples and AP for a single scene."""
    m = match_detections(scores, boxes, labels, iou_threshold)
    p, r = precision_recall(scores, m.true_positive, len(labels))
    return m, p, r, average_precision(p, r)


def evaluate_detections(scenes: Sequence[tuple[Sequence[float], Sequence[OrientedBox], Sequence[OrientedBox]]], iou_threshold: float = 0.5):
    """Pool ``(scores, boxes, labels)`` triples over scenes.

    Returns per-scene matches, pooled precision and recall, and AP.
    """
    matches, all_scores, all_tp, n_labels = [], [], [], 0
    for scores, boxes, labels in scenes:
        m = match_detections(scores, boxes, labels, iou_threshold)
        matches.append(m)
        all_scores.extend(scores)
        all_tp.extend(m.true_positive)
        n_labels += len(labels)
    p, r = precision_recall(all_scores, all_tp, n_labels)
    return matches, p, r, average_precision(p, r)


def operating_point(scores, true_positive, n_labels: int, recall: float) -> float:
    """Highest score threshold whose kept detections reach ``recall``."""
    scores = np.asarray(scores, dtype=float)
    p, r = precision_recall(scores, true_positive, n_labels)
    reached = np.nonzero(r >= recall - 1e-12)[0]
    if len(reached) == 0:
        best = float(r[-1]) if len(r) else 0.0
        raise ValueError(f"operating recall {recall} is unreachable; maximum achievable recall is {best:.4f}")
    return float(np.sort(scores)[::-1][reached[0]])


def displacement_metrics(
    scores,
    true_positive,
    n_labels: int,
    pred_xy,
    pred_heading,
    label_future,
    times: Sequence[float],
    horizons: Sequence[float] = (0.0, 1.0, 3.0),
    recall: float = 0.8,
) -> dict[float, tuple[float, float]]:
    """Mean centroid L2 (cm) and heading error (deg) of true positives per horizon.

    ``pred_xy`` (N, T, 2), ``pred_heading`` (N, T) and ``label_future``
    (N, T, 3) are in a common frame; rows of non-matches are ignored.
    """
    scores = np.asarray(scores, dtype=float)
    tp = np.asarray(true_positive, dtype=bool)
    thr = operating_point(scores, tp, n_labels, recall)
    use = tp & (scores >= thr)
    pred_xy = np.asarray(pred_xy, dtype=float)
    pred_heading = np.asarray(pred_heading, dtype=float)
    label_future = np.asarray(label_future, dtype=float)
    times = np.asarray(times, dtype=float)
    out = {}
    for hz in horizons:
        k = int(np.argmin(np.abs(times - hz)))
        if abs(times[k] - hz) > 1e-9:
            raise ValueError(f"horizon {hz} s is not on the forecast grid")
        d = pred_xy[use, k] - label_future[use, k, :2]
        l2 = float(np.mean(np.hypot(d[:, 0], d[:, 1]))) * 100.0
        head = float(np.mean(np.abs(wrap_angle(pred_heading[use, k] - label_future[use, k, 2])))) * 180.0 / math.pi
        out[float(hz)] = (l2, head)
    return out


def collision_rate(
    poses,
    dims,
    times: Sequence[float],
    windows: Sequence[tuple[float, float]] = ((0.0, 1.0), (0.0, 3.0)),
    scene_index=None,
    tol: float = 1e-6,
) -> dict[tuple[float, float], float]:
    """Per-mille share of trajectories overlapping another at a shared in-window step.

    ``poses`` is (N, T, 3) of (x, y, heading) means; ``dims`` is (N, 2) of
    (length, width). Only actors of the same scene are compared.
    """
    poses = np.asarray(poses, dtype=float)
    dims = np.asarray(dims, dtype=float)
    times = np.asarray(times, dtype=float)
    if poses.ndim != 3 or poses.shape[1] != len(times) or poses.shape[2] != 3:
        raise ValueError(f"poses {poses.shape} do not lie on the {len(times)}-step grid")
    n = len(poses)
    scene = np.zeros(n, dtype=np.int64) if scene_index is None else np.asarray(scene_index)
    radius = 0.5 * np.hypot(dims[:, 0], dims[:, 1]) if n else np.zeros(0)
    # first timestep at which each ordered pair overlaps (inf if never)
    first = np.full((n, n), np.inf)
    for k, t in enumerate(times):
        xy = poses[:, k, :2]
        dist = np.hypot(*(xy[:, None] - xy[None]).transpose(2, 0, 1)) if n else np.zeros((0, 0))
        cand = (dist < radius[:, None] + radius[None]) & (scene[:, None] == scene[None]) & np.isinf(first)
        for i, j in zip(*np.nonzero(np.triu(cand, 1))):
            a = OrientedBox(tuple(poses[i, k, :2]), dims[i, 0], dims[i, 1], poses[i, k, 2])
            b = OrientedBox(tuple(poses[j, k, :2]), dims[j, 0], dims[j, 1], poses[j, k, 2])
            if boxes_overlap(a, b, tol):
                first[i, j] = first[j, i] = t
    out = {}
    for lo, hi in windows:
        inside = (first >= lo - 1e-9) & (first <= hi + 1e-9)
        colliding = inside.any(axis=1)
        out[(lo, hi)] = 1000.0 * float(colliding.sum()) / n if n else 0.0
    return out


@dataclass
class MetricsReport:
    variant: str
    map: float
    operating_recall: float
    errors: dict[float, tuple[float, float]]
    collision: dict[tuple[float, float], float]
    nll: float = float("nan")
    pr: tuple[np.ndarray, np.ndarray] = field(default_factory=lambda: (np.zeros(0), np.zeros(0)))

    def rows(self) -> list[dict]:
        out = []
        for hz, (l2, head) in sorted(self.errors.items()):
            out.append(
                {
                    "variant": self.variant,
                    "horizon_s": hz,
                    "map": self.map,
                    "operating_recall": self.operating_recall,
                    "l2_cm": l2,
                    "heading_deg": head,
                    "collision_0_1s_permille": self.collision.get((0.0, 1.0), float("nan")),
                    "collision_0_3s_permille": self.collision.get((0.0, 3.0), float("nan")),
                    "nll": self.nll,
                }
            )
        return out


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_report_csv(path, reports: Sequence[MetricsReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for rep in reports:
            for row in rep.rows():
                w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])


def read_report_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k in REPORT_COLUMNS[1:]:
            row[k] = float(row[k])
    return rows
