"""Dense single-anchor vehicle detector over BEV occupancy and map channels.

The network runs two 3x3 convolutions at input resolution, halves the grid
with a 2x2 stride-2 convolution and applies two more 3x3 convolutions. A
1x1 head emits seven channels per feature cell: the score logit followed by
``(dx, dy, dlog_length, dlog_width, sin_heading, cos_heading)``. Every cell
carries one anchor at its center with a fixed vehicle-sized prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import OrientedBox, nms, wrap_angle
from .nn import ParamStore, Tensor, as_tensor, conv, custom_op, init_conv, relu
from .raster import GridSpec

__all__ = [
    "DetectorConfig",
    "Detection",
    "init_detector",
    "detect_forward",
    "encode_box",
    "decode_boxes",
    "detection_loss",
    "select_detections",
    "oracle_detector",
    "detect",
]

N_OUT = 7
SCORE, DX, DY, DLOG_L, DLOG_W, SIN, COS = range(7)


@dataclass(frozen=True)
class DetectorConfig:
    width_fine: int = 16
    width_coarse: int = 32
    prior_length: float = 4.5
    prior_width: float = 1.9
    score_threshold: float = 0.1
    top_k: int = 200
    nms_iou: float = 0.1
    negative_ratio: int = 3
    # Negatives mined when a scene has no labels at all.
    min_negatives: int = 16
    prior_prob: float = 0.01


@dataclass(frozen=True)
class Detection:
    score: float
    box: OrientedBox
    label_index: int | None = None  # set by the oracle detector

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def init_detector(store: ParamStore, n_in: int, rng: np.random.Generator, config: DetectorConfig = DetectorConfig(), name: str = "det") -> None:
    f, c = config.width_fine, config.width_coarse
    init_conv(store, f"{name}.conv1", n_in, f, 3, rng)
    init_conv(store, f"{name}.conv2", f, f, 3, rng)
    init_conv(store, f"{name}.down", f, c, 2, rng)
    init_conv(store, f"{name}.conv3", c, c, 3, rng)
    init_conv(store, f"{name}.conv4", c, c, 3, rng)
    init_conv(store, f"{name}.head", c, N_OUT, 1, rng, gain=0.01)
    store[f"{name}.head.bias"].data[SCORE] = -math.log((1 - config.prior_prob) / config.prior_prob)
    store[f"{name}.head.bias"].data[COS] = 1.0


def detect_forward(store: ParamStore, inputs, name: str = "det") -> tuple[Tensor, Tensor]:
    """Run the detector on a (C, H, W) input with even H and W.

    Returns ``(raw, features)``: raw anchor outputs (7, H/2, W/2) and the
    coarse feature map the head reads.
    """
    x = as_tensor(inputs)
    if x.ndim != 3 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ValueError(f"expected a (C, H, W) input with even H and W, got {x.shape}")
    if x.shape[0] != store[f"{name}.conv1.weight"].shape[1]:
        raise ValueError(f"expected {store[f'{name}.conv1.weight'].shape[1]} input channels, got {x.shape[0]}")
    x = relu(conv(store, f"{name}.conv1", x, padding=1))
    x = relu(conv(store, f"{name}.conv2", x, padding=1))
    x = relu(conv(store, f"{name}.down", x, stride=2))
    x = relu(conv(store, f"{name}.conv3", x, padding=1))
    feats = relu(conv(store, f"{name}.conv4", x, padding=1))
    return conv(store, f"{name}.head", feats), feats


def _anchor_centers(grid: GridSpec):
    xs, ys = grid.cell_centers()
    return np.meshgrid(xs, ys, indexing="ij")


def _canonical_heading(theta: float) -> float:
    """Heading folded into (-pi/2, pi/2]; a box is unchanged by a half turn."""
    t = wrap_angle(theta)
    if t > math.pi / 2:
        t -= math.pi
    elif t <= -math.pi / 2:
        t += math.pi
    return t


def encode_box(box: OrientedBox, anchor_xy, config: DetectorConfig = DetectorConfig(), canonical: bool = False) -> np.ndarray:
    """Six regression targets of ``box`` relative to an anchor center."""
    th = _canonical_heading(box.heading) if canonical else box.heading
    return np.array(
        [
            box.center[0] - anchor_xy[0],
            box.center[1] - anchor_xy[1],
            math.log(box.length / config.prior_length),
            math.log(box.width / config.prior_width),
            math.sin(th),
            math.cos(th),
        ]
    )


def decode_boxes(raw, grid: GridSpec, config: DetectorConfig = DetectorConfig(), min_score: float | None = None) -> list[tuple[float, OrientedBox]]:
    """Turn raw anchor outputs into ``(score, box)`` candidates in row-major anchor order.

    ``min_score`` drops anchors below it before any box is built.
    """
    r = raw.data if isinstance(raw, Tensor) else np.asarray(raw, dtype=float)
    if r.shape != (N_OUT, grid.rows, grid.cols):
        raise ValueError(f"raw output {r.shape} does not match grid {grid.rows}x{grid.cols}")
    score = 0.5 * (1.0 + np.tanh(0.5 * r[SCORE]))
    ax, ay = _anchor_centers(grid)
    keep = np.ones(score.shape, dtype=bool) if min_score is None else score >= min_score
    out = []
    for i, j in zip(*np.nonzero(keep)):
        box = OrientedBox(
            (float(ax[i, j] + r[DX, i, j]), float(ay[i, j] + r[DY, i, j])),
            float(config.prior_length * math.exp(r[DLOG_L, i, j])),
            float(config.prior_width * math.exp(r[DLOG_W, i, j])),
            math.atan2(r[SIN, i, j], r[COS, i, j]),
        )
        out.append((float(score[i, j]), box))
    return out


def _assign(labels: Sequence[OrientedBox], grid: GridSpec):
    """Anchor cell of each label center; labels outside the grid are skipped."""
    cells = []
    for k, b in enumerate(labels):
        x, y = b.center
        if grid.contains(x, y):
            i = min(int((x - grid.x_min) // grid.resolution), grid.rows - 1)
            j = min(int((y - grid.y_min) // grid.resolution), grid.cols - 1)
            cells.append((k, i, j))
    return cells


def _smooth_l1(d: np.ndarray) -> np.ndarray:
    a = np.abs(d)
    return np.where(a < 1.0, 0.5 * d * d, a - 0.5)


def detection_loss(raw: Tensor, labels: Sequence[OrientedBox], grid: GridSpec, config: DetectorConfig = DetectorConfig()) -> tuple[Tensor, Tensor]:
    """Classification and regression losses of raw anchor outputs.

    Binary cross-entropy is summed over positive anchors and the
    ``negative_ratio`` x P negatives with the highest loss. Smooth L1
    (beta = 1) is summed over the six box channels of positive anchors.
    The heading channels are scored against whichever of the label's
    (sin, cos) and its negation lies closer. Returns ``(cls, reg)``.
    """
    raw = as_tensor(raw)
    r = raw.data
    if r.shape != (N_OUT, grid.rows, grid.cols):
        raise ValueError(f"raw output {r.shape} does not match grid {grid.rows}x{grid.cols}")
    ax, ay = _anchor_centers(grid)
    cells = _assign(labels, grid)
    target = np.zeros((grid.rows, grid.cols))
    pos = np.zeros((grid.rows, grid.cols), dtype=bool)
    reg_target = np.zeros((6, grid.rows, grid.cols))
    for k, i, j in cells:
        pos[i, j] = True
        target[i, j] = 1.0
        reg_target[:, i, j] = encode_box(labels[k], (ax[i, j], ay[i, j]), config, canonical=True)
    n_pos = int(pos.sum())

    z = r[SCORE]
    bce = np.logaddexp(0.0, z) - target * z
    n_neg = config.negative_ratio * n_pos if n_pos else config.min_negatives
    neg_loss = np.where(pos, -np.inf, bce).ravel()
    n_neg = min(n_neg, int((~pos).sum()))
    chosen = np.zeros(z.size, dtype=bool)
    if n_neg > 0:
        # stable descending order keeps the choice deterministic under ties
        order = np.argsort(-neg_loss, kind="stable")[:n_neg]
        chosen[order] = True
    used = pos | chosen.reshape(z.shape)
    cls_val = float(np.sum(bce[used]))
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    g_cls = np.zeros_like(r)
    g_cls[SCORE] = np.where(used, sig - target, 0.0)

    diff = r[1:] - reg_target
    # a half turn leaves the box unchanged, so each positive regresses to the nearer heading encoding
    head = slice(SIN - 1, COS)
    flipped = r[SIN : COS + 1] + reg_target[head]
    flip = _smooth_l1(flipped).sum(axis=0) < _smooth_l1(diff[head]).sum(axis=0)
    diff[head] = np.where(flip, flipped, diff[head])
    small = np.abs(diff) < 1.0
    sl1 = _smooth_l1(diff) * pos
    reg_val = float(np.sum(sl1))
    g_reg = np.zeros_like(r)
    g_reg[1:] = np.where(small, diff, np.sign(diff)) * pos

    cls = custom_op([raw], np.asarray(cls_val), lambda g: (g * g_cls,))
    reg = custom_op([raw], np.asarray(reg_val), lambda g: (g * g_reg,))
    return cls, reg


def select_detections(candidates: Sequence[tuple[float, OrientedBox]], config: DetectorConfig = DetectorConfig(), score_threshold: float | None = None) -> list[Detection]:
    """Score threshold, then the ``top_k`` highest scores, then greedy NMS."""
    thr = config.score_threshold if score_threshold is None else score_threshold
    kept = [(s, b) for s, b in candidates if s >= thr]
    order = sorted(range(len(kept)), key=lambda i: -kept[i][0])[: config.top_k]
    top = [kept[i] for i in order]
    return [Detection(float(s), b) for s, b in nms(top, config.nms_iou)]


def detect(store: ParamStore, inputs, grid: GridSpec, config: DetectorConfig = DetectorConfig(), name: str = "det") -> list[Detection]:
    """Forward pass, decoding and selection on a coarse feature ``grid``."""
    raw, _ = detect_forward(store, inputs, name)
    thr = config.score_threshold
    return select_detections(decode_boxes(raw, grid, config, min_score=thr), config)


def oracle_detector(
    labels: Sequence[OrientedBox],
    grid: GridSpec,
    seed: int,
    sigma_xy: float = 0.0,
    sigma_theta: float = 0.0,
    sigma_size: float = 0.0,
    fp_rate: float = 0.0,
    fn_rate: float = 0.0,
    config: DetectorConfig = DetectorConfig(),
) -> list[Detection]:
    """Ground-truth boxes with optional noise, misses and spurious boxes.

    Kept labels score 1.0 and remember their index; round(fp_rate * n)
    spurious boxes with the prior size land uniformly in ``grid`` with score 0.6.
    """
    if not (0.0 <= fp_rate <= 1.0 and 0.0 <= fn_rate <= 1.0):
        raise ValueError("rates must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    out = []
    for k, b in enumerate(labels):
        if rng.random() < fn_rate:
            continue
        dx, dy = rng.normal(0.0, sigma_xy, size=2) if sigma_xy > 0 else (0.0, 0.0)
        dth = rng.normal(0.0, sigma_theta) if sigma_theta > 0 else 0.0
        dl, dw = rng.normal(0.0, sigma_size, size=2) if sigma_size > 0 else (0.0, 0.0)
        box = OrientedBox(
            (b.center[0] + dx, b.center[1] + dy), max(b.length + dl, 0.5), max(b.width + dw, 0.5), b.heading + dth
        )
        out.append(Detection(1.0, box if (dx or dy or dth or dl or dw) else b, k))
    for _ in range(int(round(fp_rate * len(labels)))):
        x = rng.uniform(grid.x_min, grid.x_max)
        y = rng.uniform(grid.y_min, grid.y_max)
        out.append(Detection(0.6, OrientedBox((x, y), config.prior_length, config.prior_width, rng.uniform(-math.pi, math.pi))))
    return out
