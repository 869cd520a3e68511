"""Multi-task training, scheduled sampling, checkpoints and model evaluation.

Three modes are supported:

``joint``
    detector and forecaster trained together; the forecaster reads detector
    features and, per scene, receives ground-truth boxes with the scheduled
    probability and live detections otherwise.
``forecast``
    detector disabled; the oracle detector feeds boxes and the forecaster
    reads the raw occupancy and map channels.
``detect``
    detector only.

Checkpoint layout (little-endian): the 7 bytes ``SPAGNN1``, a uint32 entry
count, then per entry a uint32 name length, the UTF-8 name, a uint32 rank,
rank uint32 dimensions and the float64 values in C order.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .detector import (
    Detection,
    DetectorConfig,
    decode_boxes,
    detect_forward,
    detection_loss,
    init_detector,
    oracle_detector,
    select_detections,
)
from .evaluation import MetricsReport, collision_rate, displacement_metrics, evaluate_detections
from .geometry import OrientedBox, box_iou
from .model import ModelConfig, forward_batch, init_model, roi_inputs
from .nn import ParamStore, Tensor, adam_step, gather
from .ops import trajectory_nll
from .raster import BevConfig, GridSpec, rasterize_map, voxelize
from .scenes import FORECAST_TIMES, Scenario

__all__ = [
    "TrainConfig",
    "PreparedScene",
    "TrainResult",
    "scheduled_prob",
    "prepare_scene",
    "symmetry_transform",
    "local_targets",
    "match_to_labels",
    "total_loss",
    "build_store",
    "train_loop",
    "save_checkpoint",
    "load_checkpoint",
    "write_trace_csv",
    "predict",
    "evaluate_model",
]

MAGIC = b"SPAGNN1"
MODES = ("joint", "forecast", "detect")
FULL_SCALE_BREAKPOINTS = (10_000, 20_000)
SCHEDULE_PROBS = (1.0, 0.7, 0.3)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 4
    iterations: int = 5000
    w_cls: float = 1.0
    w_reg: float = 1.0
    w_nll: float = 1.0
    breakpoints: tuple[int, int] = (1500, 3000)
    seed: int = 0
    variant: str = "full"
    mode: str = "joint"
    hidden: int = 64
    n_steps: int = 3
    # oracle detector noise used in forecast mode
    oracle_sigma_xy: float = 0.0
    oracle_sigma_theta: float = 0.0
    match_iou: float = 0.5
    # random quarter turns and mirror images of each training scene
    augment: bool = False

    def __post_init__(self):
        if min(self.w_cls, self.w_reg, self.w_nll) < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.breakpoints[0] < self.breakpoints[1]:
            raise ValueError("breakpoints must be strictly increasing")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be positive and iterations non-negative")

    def model_config(self) -> ModelConfig:
        return ModelConfig(variant=self.variant, hidden=self.hidden, n_steps=self.n_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["breakpoints"] = list(self.breakpoints)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "breakpoints" in d:
            d["breakpoints"] = tuple(int(b) for b in d["breakpoints"])
        return cls(**d)


def scheduled_prob(iteration: int, breakpoints: Sequence[int] = FULL_SCALE_BREAKPOINTS) -> float:
    """Probability of feeding ground-truth boxes at ``iteration``."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    if iteration < breakpoints[0]:
        return SCHEDULE_PROBS[0]
    if iteration < breakpoints[1]:
        return SCHEDULE_PROBS[1]
    return SCHEDULE_PROBS[2]


# ---------------------------------------------------------------------------
# Data preparation


@dataclass
class PreparedScene:
    """Network inputs and targets of one scenario."""

    inputs: np.ndarray  # (C, H, W) uint8 occupancy then map channels
    grid: GridSpec
    label_boxes: list[OrientedBox]
    label_future: np.ndarray  # (L, T, 3) in the scene frame
    seed: int

    def input_tensor(self) -> np.ndarray:
        return self.inputs.astype(np.float64)


def prepare_scene(sc: Scenario, bev: BevConfig = BevConfig()) -> PreparedScene:
    occ = voxelize(sc.sweeps, bev)
    maps = rasterize_map(sc.map_elements, bev.grid)
    inputs = np.concatenate([occ.data.transpose(2, 0, 1), maps.data.transpose(2, 0, 1)])
    future = np.stack([lb.future for lb in sc.labels]) if sc.labels else np.zeros((0, len(FORECAST_TIMES), 3))
    return PreparedScene(np.ascontiguousarray(inputs), bev.grid, [lb.box for lb in sc.labels], future, sc.seed)


def symmetry_transform(sc: PreparedScene, quarter_turns: int, mirror: bool) -> PreparedScene:
    """The scene mirrored across the x axis (when ``mirror``), then turned by ``quarter_turns`` x 90 deg.

    The grid must be square and centered on the origin so that both maps
    carry cells onto cells.
    """
    g = sc.grid
    if g.rows != g.cols or abs(g.x_min + g.x_max) > 1e-9 or abs(g.y_min + g.y_max) > 1e-9:
        raise ValueError("symmetry transforms need a square grid centered on the origin")
    inputs = sc.inputs[:, :, ::-1] if mirror else sc.inputs
    inputs = np.ascontiguousarray(np.rot90(inputs, quarter_turns % 4, axes=(1, 2)))
    phi = (quarter_turns % 4) * math.pi / 2
    c, s = round(math.cos(phi)), round(math.sin(phi))
    sign = -1.0 if mirror else 1.0

    def pose(x, y, th):
        y, th = sign * y, sign * th
        return c * x - s * y, s * x + c * y, th + phi

    boxes = []
    for b in sc.label_boxes:
        x, y, th = pose(b.center[0], b.center[1], b.heading)
        boxes.append(OrientedBox((x, y), b.length, b.width, th))
    future = sc.label_future.copy()
    if future.size:
        x, y, th = pose(future[..., 0], future[..., 1], future[..., 2])
        future[..., 0], future[..., 1], future[..., 2] = x, y, np.angle(np.exp(1j * th))
    return PreparedScene(inputs, g, boxes, future, sc.seed)


def local_targets(box: OrientedBox, future: np.ndarray) -> np.ndarray:
    """Waypoints (T, 3) re-expressed in the frame of ``box``."""
    c, s = math.cos(box.heading), math.sin(box.heading)
    dx, dy = future[:, 0] - box.center[0], future[:, 1] - box.center[1]
    dth = np.arctan2(np.sin(future[:, 2] - box.heading), np.cos(future[:, 2] - box.heading))
    return np.column_stack([c * dx + s * dy, -s * dx + c * dy, dth])


def match_to_labels(detections: Sequence[Detection], labels: Sequence[OrientedBox], iou_threshold: float = 0.5) -> list[int]:
    """Label index of each detection, or -1.

    Oracle detections keep the label they came from; others are matched
    greedily by score to unmatched labels with IoU at least ``iou_threshold``.
    """
    out = [-1] * len(detections)
    taken = set()
    for i, d in enumerate(detections):
        if d.label_index is not None:
            out[i] = d.label_index
            taken.add(d.label_index)
    order = sorted((i for i, d in enumerate(detections) if d.label_index is None), key=lambda i: -detections[i].score)
    for i in order:
        best, best_iou = -1, iou_threshold
        for k, lb in enumerate(labels):
            if k in taken:
                continue
            iou = box_iou(detections[i].box, lb)
            if iou >= best_iou and (best < 0 or iou > best_iou):
                best, best_iou = k, iou
        if best >= 0:
            out[i] = best
            taken.add(best)
    return out


def total_loss(
    det_terms: Sequence[tuple[Tensor, Tensor]],
    forecasts,
    used: Sequence[Sequence[Detection]],
    scenes: Sequence[PreparedScene],
    config: TrainConfig,
) -> dict[str, Tensor]:
    """Weighted sum of detection and forecasting losses over a batch.

    ``det_terms`` holds (cls, reg) per scene (may be empty); ``forecasts`` is
    the :class:`~spagnn.model.ForecastOutput` for the boxes in ``used``.
    Returns ``cls``, ``reg``, ``nll`` and ``total`` tensors.
    """
    zero = Tensor(np.asarray(0.0))
    cls = sum((c for c, _ in det_terms), zero)
    reg = sum((r for _, r in det_terms), zero)
    nodes, targets = [], []
    offset = 0
    for dets, sc in zip(used, scenes):
        for i, lab in enumerate(match_to_labels(dets, sc.label_boxes, config.match_iou)):
            if lab >= 0:
                nodes.append(offset + i)
                targets.append(local_targets(dets[i].box, sc.label_future[lab]))
        offset += len(dets)
    nll = trajectory_nll(gather(forecasts.local, np.array(nodes)), np.stack(targets)) if nodes else zero
    total = cls * config.w_cls + reg * config.w_reg + nll * config.w_nll
    return {"cls": cls, "reg": reg, "nll": nll, "total": total}


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainResult:
    store: ParamStore
    trace: list[dict]
    config: TrainConfig


def n_input_channels(bev: BevConfig = BevConfig()) -> int:
    return bev.shape[2] + 3


def build_store(config: TrainConfig, n_in: int, detector: DetectorConfig = DetectorConfig()) -> ParamStore:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    store = ParamStore()
    if config.mode != "forecast":
        init_detector(store, n_in, rng, detector)
    if config.mode != "detect":
        feat_in = n_in if config.mode == "forecast" else detector.width_coarse
        init_model(store, feat_in, rng, config.model_config())
    return store


def _oracle(sc: PreparedScene, config: TrainConfig, seed: int) -> list[Detection]:
    return oracle_detector(sc.label_boxes, sc.grid, seed, sigma_xy=config.oracle_sigma_xy, sigma_theta=config.oracle_sigma_theta)


def train_loop(
    config: TrainConfig,
    scenes: Sequence[PreparedScene],
    detector: DetectorConfig = DetectorConfig(),
    store: ParamStore | None = None,
    log_every: int = 0,
    on_step=None,
) -> TrainResult:
    """Adam on the weighted multi-task loss; deterministic given the config and data.

    ``on_step(step, store)`` is called after every update when given.
    """
    if not scenes:
        raise ValueError("dataset is empty")
    n_in = scenes[0].inputs.shape[0]
    store = build_store(config, n_in, detector) if store is None else store
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    mcfg = config.model_config()
    cache: dict[int, np.ndarray] = {}
    cacheable = config.mode == "forecast" and config.oracle_sigma_xy == 0 and config.oracle_sigma_theta == 0 and not config.augment
    coarse = scenes[0].grid.downsample(2)
    trace = []
    for it in range(config.iterations):
        idx = rng.choice(len(scenes), size=config.batch_size, replace=len(scenes) < config.batch_size)
        p_gt = scheduled_prob(it, config.breakpoints)
        det_terms, rois, used, batch = [], [], [], []
        for k in idx:
            sc = scenes[int(k)]
            if config.augment:
                sc = symmetry_transform(sc, int(rng.integers(4)), bool(rng.integers(2)))
            batch.append(sc)
            coin = rng.random()
            feats = None
            if config.mode != "forecast":
                raw, feats = detect_forward(store, sc.input_tensor())
                det_terms.append(detection_loss(raw, sc.label_boxes, coarse, detector))
            if config.mode == "detect":
                used.append([])
                rois.append(None)
                continue
            if config.mode == "forecast" or coin < p_gt:
                dets = _oracle(sc, config, int(rng.integers(2**31)))
            else:
                dets = select_detections(decode_boxes(raw, coarse, detector, min_score=detector.score_threshold), detector)
            used.append(dets)
            boxes = [d.box for d in dets]
            if config.mode == "forecast":
                if cacheable and int(k) in cache:
                    rois.append(cache[int(k)])
                else:
                    r = roi_inputs(sc.input_tensor(), sc.grid, boxes, mcfg).data
                    if cacheable:
                        cache[int(k)] = r
                    rois.append(r)
            else:
                rois.append(roi_inputs(feats, coarse, boxes, mcfg) if boxes else None)
        if config.mode == "detect":
            forecasts = None
            losses = total_loss(det_terms, None, [[] for _ in batch], batch, config)
        else:
            forecasts = forward_batch(store, rois, [[d.box for d in u] for u in used], mcfg)
            losses = total_loss(det_terms, forecasts, used, batch, config)
        total = losses["total"]
        if not np.isfinite(total.item()):
            raise FloatingPointError(f"non-finite loss at step {it}")
        if total.requires_grad:
            total.backward()
        adam_step(store, lr=config.lr)
        row = {"step": it, **{k: float(v.item()) for k, v in losses.items()}}
        trace.append(row)
        if log_every and it % log_every == 0:
            print(f"step {it}: " + " ".join(f"{k}={row[k]:.4f}" for k in ("cls", "reg", "nll", "total")), flush=True)
        if on_step is not None:
            on_step(it, store)
    return TrainResult(store, trace, config)


# ---------------------------------------------------------------------------
# Files


def save_checkpoint(path, store: ParamStore) -> None:
    chunks = [MAGIC, struct.pack("<I", len(store))]
    for name, t in store.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path, store: ParamStore | None = None) -> dict[str, np.ndarray]:
    """Read a checkpoint; with ``store`` given, also validate shapes and load it."""
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: bad magic, not a checkpoint")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, blob, pos)
        pos += struct.calcsize(fmt)
        return vals

    try:
        (count,) = take("<I")
        out = {}
        for _ in range(count):
            (n,) = take("<I")
            name = blob[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = take("<I")
            shape = take(f"<{rank}I")
            size = int(np.prod(shape)) if rank else 1
            if pos + 8 * size > len(blob):
                raise ValueError(f"{path}: entry {name!r} is truncated")
            out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint") from exc
    if store is not None:
        store.load_state_dict(out)
    return out


def write_trace_csv(path, trace: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "cls", "reg", "nll", "total"])
        for row in trace:
            w.writerow([row["step"]] + [repr(float(row[k])) for k in ("cls", "reg", "nll", "total")])


# ---------------------------------------------------------------------------
# Inference and evaluation


@dataclass
class ScenePrediction:
    detections: list[Detection]
    world: np.ndarray  # (N, T, 7) scene-frame output states
    label_index: list[int]
    nll: float  # summed over matched actors and timesteps
    n_matched: int


def predict(store: ParamStore, config: TrainConfig, sc: PreparedScene, detector: DetectorConfig = DetectorConfig()) -> ScenePrediction:
    """Detections (oracle in forecast mode) and their forecasts for one scene."""
    mcfg = config.model_config()
    if config.mode == "forecast":
        dets = _oracle(sc, config, sc.seed)
        feats, grid = sc.input_tensor(), sc.grid
    else:
        raw, feats = detect_forward(store, sc.input_tensor())
        grid = sc.grid.downsample(2)
        dets = select_detections(decode_boxes(raw, grid, detector, min_score=detector.score_threshold), detector)
    if config.mode == "detect" or not dets:
        return ScenePrediction(dets, np.zeros((len(dets), mcfg.n_times, 7)), [-1] * len(dets), 0.0, 0)
    boxes = [d.box for d in dets]
    out = forward_batch(store, [roi_inputs(feats, grid, boxes, mcfg).data], [boxes], mcfg)
    labels = match_to_labels(dets, sc.label_boxes, config.match_iou)
    nll, n = 0.0, 0
    for i, lab in enumerate(labels):
        if lab >= 0:
            nll += trajectory_nll(out.local[i], local_targets(boxes[i], sc.label_future[lab])).item()
            n += 1
    return ScenePrediction(dets, out.world(), labels, nll, n)


def evaluate_model(
    store: ParamStore,
    config: TrainConfig,
    scenes: Sequence[PreparedScene],
    recall: float = 0.8,
    detector: DetectorConfig = DetectorConfig(),
    variant_name: str | None = None,
) -> MetricsReport:
    """Detection AP, TP displacement errors, collision rates and mean NLL over ``scenes``."""
    preds = [predict(store, config, sc, detector) for sc in scenes]
    _, p, r, ap = evaluate_detections([([d.score for d in pr.detections], [d.box for d in pr.detections], sc.label_boxes) for pr, sc in zip(preds, scenes)])
    name = variant_name or config.variant
    if config.mode == "detect":
        return MetricsReport(name, ap, recall, {}, {}, float("nan"), (p, r))
    scores, tp, xy, heading, fut, poses, dims, scene_idx = [], [], [], [], [], [], [], []
    T = len(FORECAST_TIMES)
    for s, (pr, sc) in enumerate(zip(preds, scenes)):
        for i, d in enumerate(pr.detections):
            scores.append(d.score)
            lab = pr.label_index[i]
            tp.append(lab >= 0)
            xy.append(pr.world[i, :, :2])
            heading.append(pr.world[i, :, 5])
            fut.append(sc.label_future[lab] if lab >= 0 else np.zeros((T, 3)))
            poses.append(np.column_stack([pr.world[i, :, :2], pr.world[i, :, 5]]))
            dims.append((d.box.length, d.box.width))
            scene_idx.append(s)
    n_labels = sum(len(sc.label_boxes) for sc in scenes)
    errors = displacement_metrics(scores, tp, n_labels, np.array(xy), np.array(heading), np.array(fut), FORECAST_TIMES, recall=recall)
    coll = collision_rate(np.array(poses), np.array(dims), FORECAST_TIMES, scene_index=np.array(scene_idx))
    n_match = sum(pr.n_matched for pr in preds)
    nll = sum(pr.nll for pr in preds) / (n_match * T) if n_match else float("nan")
    return MetricsReport(name, ap, recall, errors, coll, nll, (p, r))
