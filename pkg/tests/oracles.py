"""Independent reference implementations shared by the test modules."""

import math

import numpy as np

from spagnn.geometry import OrientedBox
from spagnn.model import ModelConfig, init_model
from spagnn.nn import ParamStore
from spagnn.raster import GridSpec, RroiConfig

TIMES = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
SMALL_ROI = RroiConfig(length=8.0, width=4.0, front=6.0, back=2.0, resolution=1.0)
GRID = GridSpec(-10.0, -10.0, 1.0, 20, 20)


def series_i0(k: float) -> float:
    """Partial sums of sum (k/2)^(2m) / (m!)^2 until terms drop below 1e-16 of the sum."""
    total, m = 0.0, 0
    while True:
        term = (k / 2) ** (2 * m) / math.factorial(m) ** 2
        total += term
        if term < 1e-16 * total:
            return total
        m += 1


def brute_force_rroi(features, grid, box, config, supersample=10):
    """Tent-kernel interpolation summed over every grid cell.

    Each output cell is split into ``supersample``^2 sub-cells; the sample
    reported for the cell is the one at its exact center, which is present
    because the sub-grid is evaluated on its nodes.
    """
    C, H, W = features.shape
    xs, ys = grid.cell_centers()
    c, s = math.cos(box.heading), math.sin(box.heading)
    out = np.zeros((C, config.rows, config.cols))
    for r in range(config.rows):
        for q in range(config.cols):
            sub = np.linspace(0, 1, supersample + 1)
            us = -config.back + (r + sub) * config.resolution
            vs = -config.width / 2 + (q + sub) * config.resolution
            u, v = us[supersample // 2], vs[supersample // 2]
            px = box.center[0] + c * u - s * v
            py = box.center[1] + s * u + c * v
            wx = np.maximum(0.0, 1.0 - np.abs(px - xs) / grid.resolution)
            wy = np.maximum(0.0, 1.0 - np.abs(py - ys) / grid.resolution)
            out[:, r, q] = np.einsum("chw,h,w->c", features, wx, wy)
    return out


def raster_cover(x, y, heading, length, width, lo, n, cell=0.05):
    """Cells (of the 0.05 m lattice, window starting at ``lo`` with ``n`` cells per side) whose centers lie inside the box."""
    X, Y = np.meshgrid(lo[0] + (np.arange(n[0]) + 0.5) * cell, lo[1] + (np.arange(n[1]) + 0.5) * cell, indexing="ij")
    dx, dy = X - x, Y - y
    c, s = math.cos(heading), math.sin(heading)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) < length / 2) & (np.abs(v) < width / 2)


def raster_pair_overlap(a, da, b, db, margin, cell=0.05):
    """Whether two boxes share a lattice cell, after inflating both by ``margin``."""
    ra = 0.5 * math.hypot(*da) + abs(margin)
    rb = 0.5 * math.hypot(*db) + abs(margin)
    if math.hypot(a[0] - b[0], a[1] - b[1]) > ra + rb:
        return False
    lo = np.floor((np.minimum(a[:2], b[:2]) - max(ra, rb)) / cell) * cell
    hi = np.maximum(a[:2], b[:2]) + max(ra, rb)
    n = np.ceil((hi - lo) / cell).astype(int)
    ma = raster_cover(*a, da[0] + 2 * margin, da[1] + 2 * margin, lo, n)
    mb = raster_cover(*b, db[0] + 2 * margin, db[1] + 2 * margin, lo, n)
    return bool(np.any(ma & mb))


def raster_collision_oracle(poses, dims, times, windows, margin=0.0):
    """Per-mille colliding trajectories from shared 0.05 m cells, boxes inflated by ``margin``."""
    n, T = poses.shape[:2]
    first = np.full(n, np.inf)
    for k in range(T):
        for i in range(n):
            for j in range(i + 1, n):
                if raster_pair_overlap(poses[i, k], dims[i], poses[j, k], dims[j], margin):
                    first[i] = min(first[i], times[k])
                    first[j] = min(first[j], times[k])
    return {w: 1000.0 * np.sum((first >= w[0]) & (first <= w[1])) / n for w in windows}


def random_trajectory_set(rng, n=4):
    start = rng.uniform(-8, 8, size=(n, 2))
    vel = rng.uniform(-2, 2, size=(n, 2))
    heading = rng.uniform(-math.pi, math.pi, size=n)
    yaw_rate = rng.uniform(-0.3, 0.3, size=n)
    poses = np.zeros((n, len(TIMES), 3))
    for k, t in enumerate(TIMES):
        poses[:, k, :2] = start + vel * t
        poses[:, k, 2] = heading + yaw_rate * t
    dims = np.column_stack([rng.uniform(1.0, 5.0, size=n), rng.uniform(1.0, 2.5, size=n)])
    return poses, dims


def small_config(variant="full", **kw):
    return ModelConfig(
        variant=variant,
        hidden=8,
        edge_widths=(16, 8),
        reducer_widths=(4, 4),
        state_widths=(8, 4),
        head_hidden=8,
        roi=SMALL_ROI,
        **kw,
    )


def make_store(config, n_in=3, seed=0):
    store = ParamStore()
    init_model(store, n_in, np.random.default_rng(seed), config)
    return store


def random_boxes(rng, n, spread=6.0):
    return [
        OrientedBox(tuple(rng.uniform(-spread, spread, size=2)), float(rng.uniform(3.5, 5)), float(rng.uniform(1.7, 2.2)), float(rng.uniform(-math.pi, math.pi)))
        for _ in range(n)
    ]


def move(box, phi, t):
    c, s = math.cos(phi), math.sin(phi)
    x, y = box.center
    return OrientedBox((c * x - s * y + t[0], s * x + c * y + t[1]), box.length, box.width, box.heading + phi)


def random_rois(rng, n, config, n_in=3):
    return rng.normal(size=(n, n_in + 2, config.roi.rows, config.roi.cols))
