"""Spatially-aware graph forecaster over detected vehicles.

Each detection becomes a node. Its hidden state starts as a max-pooled
convolutional summary of a rotated crop around the box, and its output
state (a trajectory distribution in the actor's own frame) comes from an
MLP on that hidden state. Nodes then exchange messages over the fully
connected directed graph for ``K`` rounds:

* the edge function reads ``(h_u, h_v, T_uv(o_u), o_v, b_u, b_v)`` in that order,
  where ``T_uv`` re-expresses u's predicted trajectory in v's frame and boxes
  are encoded relative to v;
* incoming messages are reduced with a feature-wise max;
* a GRU updates ``h_v`` and the output head re-emits ``o_v`` from it.

Variants drop parts of the edge input. ``mlp`` skips message passing,
``gnn_plain`` feeds hidden states only, ``gnn_global_box`` adds boxes in the
scene frame, ``gnn_relative_box`` adds boxes in the receiver's frame and
``full`` also adds the projected output states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .distributions import MU_X, MU_Y, N_PARAMS, TrajectoryDistribution, se2_transform_output
from .geometry import OrientedBox
from .nn import (
    ParamStore,
    Tensor,
    as_tensor,
    concat,
    conv,
    gather,
    global_max_pool,
    gru_cell,
    init_conv,
    init_gru,
    init_mlp,
    mlp,
    relu,
    scatter_max,
    stack,
)
from .ops import N_STATE_FEATURES, POSITION_SCALE, constrain, state_features, transform_output
from .raster import GridSpec, RroiConfig, feature_index, rroi_align

__all__ = [
    "VARIANTS",
    "ModelConfig",
    "ForecastOutput",
    "init_model",
    "roi_inputs",
    "encode_rois",
    "init_states",
    "build_edges",
    "relative_poses",
    "compute_messages",
    "propagate",
    "forward",
    "forward_batch",
]

VARIANTS = ("mlp", "gnn_plain", "gnn_global_box", "gnn_relative_box", "full")
BOX_FEATURES = 6
# Raw mean outputs are multiplied by this many metres.
MEAN_SCALE = 10.0
GLOBAL_SCALE = 50.0


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "full"
    hidden: int = 64
    edge_widths: tuple[int, ...] = (128, 128, 64)
    reducer_widths: tuple[int, int] = (16, 32)
    state_widths: tuple[int, int] = (64, 32)
    head_hidden: int = 64
    n_steps: int = 3
    n_times: int = 7
    roi: RroiConfig = field(default_factory=RroiConfig)
    roi_mode: str = "rroi"  # or "index" for the center-cell feature

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.roi_mode not in ("rroi", "index"):
            raise ValueError(f"unknown roi mode {self.roi_mode!r}")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")

    @property
    def edge_input(self) -> int:
        n = 2 * self.hidden
        if self.variant == "full":
            n += 2 * self.state_widths[-1]
        if self.variant in ("gnn_global_box", "gnn_relative_box", "full"):
            n += 2 * BOX_FEATURES
        return n


@dataclass
class ForecastOutput:
    """Per-actor constrained output states in each actor's frame.

    ``local`` is (N, T, 7); ``steps`` holds the output after every
    propagation round, starting with the initial states.
    """

    local: Tensor
    hidden: Tensor
    boxes: list[OrientedBox]
    scene_index: np.ndarray
    steps: list[Tensor]

    def world(self) -> np.ndarray:
        """Output states embedded in the scene frame through each actor's box pose."""
        if not self.boxes:
            return np.zeros((0,) + self.local.shape[1:])
        rot = np.array([b.heading for b in self.boxes])[:, None]
        trans = np.array([b.center for b in self.boxes])[:, None, :]
        return se2_transform_output(self.local.data, rot, trans)

    def distributions(self) -> list[TrajectoryDistribution]:
        return [TrajectoryDistribution(p) for p in self.local.data]


def init_model(store: ParamStore, n_in: int, rng: np.random.Generator, config: ModelConfig = ModelConfig(), name: str = "spagnn") -> None:
    """Create forecaster parameters for ``n_in`` input feature channels."""
    D, T = config.hidden, config.n_times
    if config.roi_mode == "rroi":
        c1, c2 = config.reducer_widths
        init_conv(store, f"{name}.reduce.0", n_in + 2, c1, 3, rng)
        init_conv(store, f"{name}.reduce.1", c1, c2, 3, rng)
        init_conv(store, f"{name}.reduce.2", c2, D, 3, rng)
    else:
        init_mlp(store, f"{name}.reduce", [n_in, D], rng)
    init_mlp(store, f"{name}.init_head", [D, config.head_hidden, N_PARAMS * T], rng, out_gain=0.1)
    if config.variant == "mlp":
        return
    if config.variant == "full":
        init_mlp(store, f"{name}.state_enc", [N_STATE_FEATURES * T, *config.state_widths], rng)
    init_mlp(store, f"{name}.edge", [config.edge_input, *config.edge_widths], rng)
    init_gru(store, f"{name}.gru", config.edge_widths[-1], D, rng)
    init_mlp(store, f"{name}.out_head", [D, config.head_hidden, N_PARAMS * T], rng, out_gain=0.1)


def _coord_channels(config: RroiConfig) -> np.ndarray:
    """Crop-frame (u, v) coordinates scaled to about [-1, 1], shape (2, rows, cols)."""
    u = -config.back + (np.arange(config.rows) + 0.5) * config.resolution
    v = -0.5 * config.width + (np.arange(config.cols) + 0.5) * config.resolution
    U, V = np.meshgrid(u, v, indexing="ij")
    return np.stack([U / config.length * 2.0, V / config.width * 2.0])


def roi_inputs(features, grid: GridSpec, boxes: Sequence[OrientedBox], config: ModelConfig = ModelConfig()) -> Tensor:
    """Per-actor reducer inputs.

    In ``rroi`` mode this is the rotated crop with two coordinate channels
    appended, (N, C + 2, rows, cols); in ``index`` mode the (N, C) feature of
    the cell under each box center.
    """
    features = as_tensor(features)
    if config.roi_mode == "index":
        if not boxes:
            return Tensor(np.zeros((0, features.shape[0])))
        return stack([feature_index(features, grid, b) for b in boxes], axis=0)
    crops = rroi_align(features, grid, list(boxes), config.roi)
    coords = np.broadcast_to(_coord_channels(config.roi), (len(boxes), 2, config.roi.rows, config.roi.cols))
    return concat([crops, Tensor(np.ascontiguousarray(coords))], axis=1)


def encode_rois(store: ParamStore, rois, config: ModelConfig = ModelConfig(), name: str = "spagnn") -> Tensor:
    """Reducer from :func:`roi_inputs` output to hidden states (N, D)."""
    x = as_tensor(rois)
    if x.shape[0] == 0:
        return Tensor(np.zeros((0, config.hidden)))
    if config.roi_mode == "index":
        return mlp(store, f"{name}.reduce", x)
    x = relu(conv(store, f"{name}.reduce.0", x, padding=1))
    x = relu(conv(store, f"{name}.reduce.1", x, stride=2, padding=1))
    x = conv(store, f"{name}.reduce.2", x, stride=2, padding=1)
    return global_max_pool(x)


def _head(store: ParamStore, head: str, h: Tensor, config: ModelConfig) -> Tensor:
    raw = mlp(store, head, h).reshape(h.shape[0], config.n_times, N_PARAMS)
    scale = np.ones(N_PARAMS)
    scale[[MU_X, MU_Y]] = MEAN_SCALE
    return constrain(raw * scale)


def init_states(store: ParamStore, rois, config: ModelConfig = ModelConfig(), name: str = "spagnn") -> tuple[Tensor, Tensor]:
    """Initial hidden states and output states from reducer inputs."""
    h0 = encode_rois(store, rois, config, name)
    if h0.shape[0] == 0:
        return h0, Tensor(np.zeros((0, config.n_times, N_PARAMS)))
    return h0, _head(store, f"{name}.init_head", h0, config)


def build_edges(counts: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Source and destination indices of all ordered pairs inside each group of nodes."""
    src, dst, offset = [], [], 0
    for n in counts:
        u, v = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        mask = u != v
        src.append(u[mask] + offset)
        dst.append(v[mask] + offset)
        offset += n
    if not src:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(src).astype(np.int64), np.concatenate(dst).astype(np.int64)


def relative_poses(boxes: Sequence[OrientedBox], src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Pose of each source box in its destination box's frame, rows (x, y, dtheta)."""
    if len(src) == 0:
        return np.zeros((0, 3))
    pose = np.array([[b.center[0], b.center[1], b.heading] for b in boxes])
    pu, pv = pose[src], pose[dst]
    c, s = np.cos(pv[:, 2]), np.sin(pv[:, 2])
    dx, dy = pu[:, 0] - pv[:, 0], pu[:, 1] - pv[:, 1]
    dth = np.arctan2(np.sin(pu[:, 2] - pv[:, 2]), np.cos(pu[:, 2] - pv[:, 2]))
    return np.column_stack([c * dx + s * dy, -s * dx + c * dy, dth])


def _box_features(boxes: Sequence[OrientedBox], src, dst, rel, variant: str) -> tuple[np.ndarray, np.ndarray]:
    dims = np.array([[b.length / 5.0, b.width / 5.0] for b in boxes])
    if variant == "gnn_global_box":
        pose = np.array([[b.center[0] / GLOBAL_SCALE, b.center[1] / GLOBAL_SCALE, math.cos(b.heading), math.sin(b.heading)] for b in boxes])
        enc = np.hstack([pose, dims])
        return enc[src], enc[dst]
    bu = np.column_stack([rel[:, :2] / POSITION_SCALE, np.cos(rel[:, 2]), np.sin(rel[:, 2]), dims[src]])
    bv = np.column_stack([np.zeros((len(dst), 2)), np.ones(len(dst)), np.zeros(len(dst)), dims[dst]])
    return bu, bv


def compute_messages(
    store: ParamStore,
    h: Tensor,
    o: Tensor,
    boxes: Sequence[OrientedBox],
    src: np.ndarray,
    dst: np.ndarray,
    config: ModelConfig = ModelConfig(),
    name: str = "spagnn",
) -> Tensor:
    """Messages along every edge ``src[e] -> dst[e]``, shape (E, edge_widths[-1])."""
    if len(src) == 0:
        return Tensor(np.zeros((0, config.edge_widths[-1])))
    T = config.n_times
    parts = [gather(h, src), gather(h, dst)]
    rel = relative_poses(boxes, src, dst)
    if config.variant == "full":
        proj = transform_output(gather(o, src), rel[:, 2:3], rel[:, None, :2])
        enc_u = mlp(store, f"{name}.state_enc", state_features(proj).reshape(len(src), N_STATE_FEATURES * T))
        enc_nodes = mlp(store, f"{name}.state_enc", state_features(o).reshape(o.shape[0], N_STATE_FEATURES * T))
        parts += [enc_u, gather(enc_nodes, dst)]
    if config.variant in ("gnn_global_box", "gnn_relative_box", "full"):
        bu, bv = _box_features(boxes, src, dst, rel, config.variant)
        parts += [Tensor(bu), Tensor(bv)]
    return mlp(store, f"{name}.edge", concat(parts, axis=-1))


def propagate(
    store: ParamStore,
    h0: Tensor,
    o0: Tensor,
    boxes: Sequence[OrientedBox],
    src: np.ndarray,
    dst: np.ndarray,
    config: ModelConfig = ModelConfig(),
    n_steps: int | None = None,
    name: str = "spagnn",
) -> tuple[Tensor, Tensor, list[Tensor]]:
    """Synchronous message passing; returns final hidden states, outputs and per-step outputs."""
    K = config.n_steps if n_steps is None else n_steps
    h, o, steps = h0, o0, [o0]
    if config.variant == "mlp":
        return h, o, steps
    n = h0.shape[0]
    for _ in range(K):
        m = compute_messages(store, h, o, boxes, src, dst, config, name)
        agg = scatter_max(m, dst, n)
        h = gru_cell(store, f"{name}.gru", agg, h)
        o = _head(store, f"{name}.out_head", h, config)
        steps.append(o)
    return h, o, steps


def forward_batch(
    store: ParamStore,
    rois: Sequence,
    boxes: Sequence[Sequence[OrientedBox]],
    config: ModelConfig = ModelConfig(),
    name: str = "spagnn",
) -> ForecastOutput:
    """Forecast several scenes at once as one disjoint graph.

    ``rois[i]`` is the :func:`roi_inputs` output for ``boxes[i]``.
    """
    counts = [len(b) for b in boxes]
    flat_boxes = [b for group in boxes for b in group]
    nonempty = [as_tensor(r) for r, n in zip(rois, counts) if n > 0]
    if not nonempty:
        empty = Tensor(np.zeros((0, config.n_times, N_PARAMS)))
        return ForecastOutput(empty, Tensor(np.zeros((0, config.hidden))), [], np.zeros(0, dtype=np.int64), [empty])
    x = nonempty[0] if len(nonempty) == 1 else concat(nonempty, axis=0)
    h0, o0 = init_states(store, x, config, name)
    src, dst = build_edges(counts)
    h, o, steps = propagate(store, h0, o0, flat_boxes, src, dst, config, name=name)
    scene_index = np.repeat(np.arange(len(counts)), counts)
    return ForecastOutput(o, h, flat_boxes, scene_index, steps)


def forward(store: ParamStore, features, grid: GridSpec, boxes: Sequence[OrientedBox], config: ModelConfig = ModelConfig(), name: str = "spagnn") -> ForecastOutput:
    """Forecast every detection of one scene from a (C, H, W) feature map."""
    boxes = list(boxes)
    rois = roi_inputs(features, grid, boxes, config) if boxes else None
    return forward_batch(store, [rois], [boxes], config, name)


def with_variant(config: ModelConfig, variant: str) -> ModelConfig:
    return replace(config, variant=variant)
