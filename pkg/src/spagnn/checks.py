"""Self-verification suites: GaBP against dense marginals, and the gradient battery.

Both return plain records so that the command line and the test suite can
report them the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .detector import DetectorConfig, detect_forward, detection_loss, init_detector
from .gabp import exact_marginals, gabp_run, random_mrf
from .geometry import OrientedBox
from .model import ModelConfig, forward, init_model
from .ops import constrain, state_features, trajectory_nll, transform_output
from .raster import GridSpec, RroiConfig, rroi_align

__all__ = ["GabpCheck", "GradCheckRow", "gabp_check", "gradient_battery", "KERNELS"]


@dataclass
class GabpCheck:
    trials: int
    n_tree: int
    max_mean_dev: float
    max_tree_precision_dev: float
    max_loopy_precision_dev: float
    n_unconverged: int


def gabp_check(max_nodes: int = 8, trials: int = 100, seed: int = 0, max_dim: int = 3) -> GabpCheck:
    """Random diagonally dominant MRFs, half trees and half loopy graphs.

    Node counts are drawn from 2..``max_nodes`` and block sizes from 1..``max_dim``.
    """
    rng = np.random.default_rng(seed)
    mean_dev = tree_dev = loopy_dev = 0.0
    n_tree = unconverged = 0
    for k in range(trials):
        n = int(rng.integers(2, max_nodes + 1))
        d = int(rng.integers(1, max_dim + 1))
        tree = k % 2 == 0
        mrf = random_mrf(n, d, rng, tree=tree)
        res = gabp_run(mrf, max_iters=2000, tol=1e-13)
        if not res.converged:
            unconverged += 1
            continue
        for got, ref in zip(res.marginals, exact_marginals(mrf)):
            mean_dev = max(mean_dev, float(np.max(np.abs(got.mean - ref.mean))))
            prec = float(np.max(np.abs(got.precision - ref.precision)) / max(1.0, np.max(np.abs(ref.precision))))
            if tree:
                tree_dev = max(tree_dev, prec)
            else:
                loopy_dev = max(loopy_dev, prec)
        n_tree += tree
    return GabpCheck(trials, n_tree, mean_dev, tree_dev, loopy_dev, unconverged)


@dataclass
class GradCheckRow:
    kernel: str
    seed: int
    max_error: float


def _store(rng, **shapes):
    store = nn.ParamStore()
    for name, shape in shapes.items():
        store.add(name, rng.normal(size=shape))
    return store


def _jitter_biases(store, rng, scale: float = 0.1) -> None:
    """Move zero-initialized biases off the ReLU kink so the check runs at a differentiable point."""
    for name, t in store.items():
        if name.endswith(".bias"):
            t.data = t.data + rng.normal(0.0, scale, size=t.shape)


def _elementwise(rng):
    s = _store(rng, a=(3, 4), c=(4, 2))
    s.add("b", rng.uniform(0.5, 2.0, size=4))
    a, b, c = s["a"], s["b"], s["c"]

    def fn():
        x = nn.tanh(a) * b + nn.sigmoid(a) / b - nn.softplus(a) ** 2
        y = nn.exp(x * 0.1) @ c + nn.log(nn.sqrt(b * b + 1.0)).sum()
        return nn.concat([y, nn.relu(y + 0.3)], axis=-1).mean()

    return fn, s


def _conv_pool(rng):
    s = _store(rng, x=(2, 3, 7, 6), w=(4, 3, 3, 3), bias=(4,))

    def fn():
        y = nn.conv2d(s["x"], s["w"], s["bias"], stride=2, padding=1)
        return (nn.global_max_pool(y) ** 2).sum() + y.mean()

    return fn, s


def _scatter_max(rng):
    s = _store(rng, m=(9, 4))
    dst = rng.integers(0, 4, size=9)

    def fn():
        return (nn.scatter_max(s["m"], dst, 5) ** 2).sum()

    return fn, s


def _gru_mlp(rng):
    s = nn.ParamStore()
    nn.init_gru(s, "gru", 3, 4, rng)
    nn.init_mlp(s, "mlp", [4, 5, 2], rng)
    s.add("x", rng.normal(size=(2, 3)))
    s.add("h", rng.normal(size=(2, 4)))

    def fn():
        h = nn.gru_cell(s, "gru", s["x"], s["h"])
        return (nn.mlp(s, "mlp", h) ** 2).sum()

    return fn, s


def _rroi(rng):
    s = _store(rng, f=(2, 12, 12))
    grid = GridSpec(-6.0, -6.0, 1.0, 12, 12)
    cfg = RroiConfig(length=4.0, width=2.0, front=3.0, back=1.0, resolution=0.5)
    boxes = [OrientedBox(tuple(rng.uniform(-2, 2, size=2)), 4.0, 2.0, float(rng.uniform(-3, 3))) for _ in range(2)]
    weights = rng.normal(size=(2, 2, cfg.rows, cfg.cols))

    def fn():
        return (rroi_align(s["f"], grid, boxes, cfg) * weights).sum()

    return fn, s


def _distribution_ops(rng):
    s = _store(rng, raw=(2, 3, 7))
    rot = rng.uniform(-3, 3, size=(2, 1))
    trans = rng.normal(size=(2, 1, 2))
    targets = rng.normal(size=(2, 3, 3))

    def fn():
        p = constrain(s["raw"])
        q = transform_output(p, rot, trans)
        return trajectory_nll(q, targets) + (state_features(q) ** 2).sum()

    return fn, s


def _detector(rng):
    s = nn.ParamStore()
    cfg = DetectorConfig(width_fine=3, width_coarse=4)
    init_detector(s, 2, rng, cfg)
    _jitter_biases(s, rng)
    x = rng.random((2, 8, 8))
    grid = GridSpec(0.0, 0.0, 2.0, 4, 4)
    labels = [OrientedBox((3.1, 4.7), 4.0, 1.8, float(rng.uniform(-3, 3)))]

    def fn():
        raw, _ = detect_forward(s, x)
        cls, reg = detection_loss(raw, labels, grid, cfg)
        return cls + reg

    return fn, s


def _end_to_end(rng):
    """Detector features, RRoI crops, three rounds of message passing and the NLL on two actors."""
    s = nn.ParamStore()
    dcfg = DetectorConfig(width_fine=3, width_coarse=4)
    mcfg = ModelConfig(
        hidden=6,
        edge_widths=(8, 6),
        reducer_widths=(3, 4),
        state_widths=(6, 4),
        head_hidden=6,
        roi=RroiConfig(length=4.0, width=2.0, front=3.0, back=1.0, resolution=1.0),
    )
    init_detector(s, 2, rng, dcfg)
    init_model(s, dcfg.width_coarse, rng, mcfg)
    _jitter_biases(s, rng)
    x = rng.random((2, 16, 16))
    grid = GridSpec(-8.0, -8.0, 1.0, 16, 16)
    coarse = grid.downsample(2)
    boxes = [
        OrientedBox((float(rng.uniform(-3, -1)), float(rng.uniform(-2, 2))), 4.5, 1.9, float(rng.uniform(-3, 3))),
        OrientedBox((float(rng.uniform(1, 3)), float(rng.uniform(-2, 2))), 4.2, 1.8, float(rng.uniform(-3, 3))),
    ]
    targets = rng.normal(0, 2, size=(2, mcfg.n_times, 3))

    def fn():
        raw, feats = detect_forward(s, x)
        cls, reg = detection_loss(raw, boxes, coarse, dcfg)
        out = forward(s, feats, coarse, boxes, mcfg)
        return cls + reg + trajectory_nll(out.local, targets)

    return fn, s


KERNELS = {
    "elementwise": _elementwise,
    "conv_pool": _conv_pool,
    "scatter_max": _scatter_max,
    "gru_mlp": _gru_mlp,
    "rroi_align": _rroi,
    "distribution_ops": _distribution_ops,
    "detector_loss": _detector,
    "end_to_end": _end_to_end,
}


def gradient_battery(seeds=range(10), kernels=None, max_coords: int = 12) -> list[GradCheckRow]:
    """Central-difference checks of every kernel for each seed."""
    rows = []
    for name in kernels or KERNELS:
        for seed in seeds:
            rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6C]))
            fn, store = KERNELS[name](rng)
            rep = nn.grad_check(fn, store, max_coords=max_coords, rng=rng)
            rows.append(GradCheckRow(name, int(seed), rep.max_error))
    return rows
