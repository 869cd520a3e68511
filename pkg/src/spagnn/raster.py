"""Bird's-eye-view rasters: LiDAR occupancy, map channels and rotated RoI sampling.

Ground grids index rows along x and columns along y. Cell ``(i, j)`` covers
``[x_min + i*res, x_min + (i+1)*res) x [y_min + j*res, y_min + (j+1)*res)``
and its center sits half a cell inside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .geometry import OrientedBox
from .nn.tensor import Tensor, as_tensor, custom_op

__all__ = [
    "GridSpec",
    "BevConfig",
    "SweepSet",
    "BevGrid",
    "MapElement",
    "MapRaster",
    "RroiConfig",
    "TOY_MAP_CHANNELS",
    "EXTENDED_MAP_CHANNELS",
    "voxelize",
    "rasterize_map",
    "rroi_sample_points",
    "rroi_align",
    "feature_index",
]

TOY_MAP_CHANNELS = ("lane", "road", "intersection")

# 17 semantic layers for richer maps; the synthetic scenes only use the first three.
EXTENDED_MAP_CHANNELS = (
    "lane",
    "road",
    "intersection",
    "crosswalk",
    "driveway",
    "lane_boundary_white",
    "lane_boundary_yellow",
    "stop_line",
    "stop_sign",
    "yield_sign",
    "traffic_light_red",
    "traffic_light_yellow",
    "traffic_light_green",
    "traffic_light_unknown",
    "bike_lane",
    "parking",
    "sidewalk",
)


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    y_min: float
    resolution: float
    rows: int
    cols: int

    @property
    def x_max(self) -> float:
        return self.x_min + self.rows * self.resolution

    @property
    def y_max(self) -> float:
        return self.y_min + self.cols * self.resolution

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.x_min + (np.arange(self.rows) + 0.5) * self.resolution
        ys = self.y_min + (np.arange(self.cols) + 0.5) * self.resolution
        return xs, ys

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x < self.x_max and self.y_min <= y < self.y_max

    def downsample(self, factor: int) -> "GridSpec":
        return GridSpec(self.x_min, self.y_min, self.resolution * factor, self.rows // factor, self.cols // factor)


@dataclass(frozen=True)
class BevConfig:
    """Region of interest and voxel sizes, all in meters."""

    x_range: tuple[float, float] = (-50.0, 50.0)
    y_range: tuple[float, float] = (-50.0, 50.0)
    z_range: tuple[float, float] = (0.0, 2.0)
    resolution: float = 0.5
    z_resolution: float = 2.0
    n_sweeps: int = 3

    @classmethod
    def full_scale(cls) -> "BevConfig":
        """140 x 80 x 5 m at 0.2 m voxels with 10 sweeps."""
        return cls((0.0, 140.0), (-40.0, 40.0), (-2.0, 3.0), 0.2, 0.2, 10)

    @staticmethod
    def _count(lo: float, hi: float, step: float) -> int:
        n = (hi - lo) / step
        if abs(n - round(n)) > 1e-6 or round(n) <= 0:
            raise ValueError(f"resolution {step} does not divide extent {hi - lo}")
        return int(round(n))

    @property
    def n_heights(self) -> int:
        return self._count(*self.z_range, self.z_resolution)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(
            self.x_range[0],
            self.y_range[0],
            self.resolution,
            self._count(*self.x_range, self.resolution),
            self._count(*self.y_range, self.resolution),
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        g = self.grid
        return g.rows, g.cols, self.n_heights * self.n_sweeps


@dataclass
class SweepSet:
    """Point clouds already expressed in the current ego frame.

    ``points[k]`` is the k-th most recent sweep (0 is the current one).
    """

    points: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class BevGrid:
    data: np.ndarray  # (rows, cols, n_heights * n_sweeps), uint8 in {0, 1}
    grid: GridSpec
    n_heights: int
    n_sweeps: int

    def chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.data.transpose(2, 0, 1), dtype=np.float64)


def voxelize(sweeps: SweepSet, config: BevConfig = BevConfig()) -> BevGrid:
    """Binary occupancy with height bins and sweeps folded into channels.

    Channel ``k * n_heights + h`` holds height bin ``h`` of sweep ``k``.
    Points outside the region of interest are dropped.
    """
    if len(sweeps) > config.n_sweeps:
        raise ValueError(f"{len(sweeps)} sweeps exceed the configured {config.n_sweeps}")
    grid = config.grid
    nh = config.n_heights
    data = np.zeros(config.shape, dtype=np.uint8)
    for k, pts in enumerate(sweeps.points):
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"non-finite point in sweep {k}")
        i = np.floor((pts[:, 0] - grid.x_min) / grid.resolution).astype(np.int64)
        j = np.floor((pts[:, 1] - grid.y_min) / grid.resolution).astype(np.int64)
        h = np.floor((pts[:, 2] - config.z_range[0]) / config.z_resolution).astype(np.int64)
        keep = (i >= 0) & (i < grid.rows) & (j >= 0) & (j < grid.cols) & (h >= 0) & (h < nh)
        data[i[keep], j[keep], k * nh + h[keep]] = 1
    return BevGrid(data, grid, nh, config.n_sweeps)


# ---------------------------------------------------------------------------
# Map rasterization


@dataclass
class MapElement:
    semantic: str
    points: np.ndarray  # (n, 2)
    closed: bool = False  # polygon if True, polyline otherwise

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)


@dataclass
class MapRaster:
    data: np.ndarray  # (rows, cols, n_channels), uint8 in {0, 1}
    grid: GridSpec
    channels: tuple[str, ...] = field(default=TOY_MAP_CHANNELS)

    def chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.data.transpose(2, 0, 1), dtype=np.float64)


def _paint_polyline(layer: np.ndarray, grid: GridSpec, pts: np.ndarray) -> None:
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(2, int(math.ceil(np.linalg.norm(b - a) / (0.25 * grid.resolution))) + 1)
        s = np.linspace(0.0, 1.0, n)[:, None]
        samples = a + s * (b - a)
        i = np.floor((samples[:, 0] - grid.x_min) / grid.resolution).astype(np.int64)
        j = np.floor((samples[:, 1] - grid.y_min) / grid.resolution).astype(np.int64)
        keep = (i >= 0) & (i < grid.rows) & (j >= 0) & (j < grid.cols)
        layer[i[keep], j[keep]] = 1


def _paint_polygon(layer: np.ndarray, grid: GridSpec, pts: np.ndarray) -> None:
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    i0 = max(int(np.floor((lo[0] - grid.x_min) / grid.resolution)), 0)
    i1 = min(int(np.ceil((hi[0] - grid.x_min) / grid.resolution)), grid.rows)
    j0 = max(int(np.floor((lo[1] - grid.y_min) / grid.resolution)), 0)
    j1 = min(int(np.ceil((hi[1] - grid.y_min) / grid.resolution)), grid.cols)
    if i0 >= i1 or j0 >= j1:
        return
    xs = grid.x_min + (np.arange(i0, i1) + 0.5) * grid.resolution
    ys = grid.y_min + (np.arange(j0, j1) + 0.5) * grid.resolution
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    inside = np.zeros(X.shape, dtype=bool)
    for a, b in zip(pts, np.roll(pts, -1, axis=0)):
        if a[1] == b[1]:
            continue
        crosses = (a[1] > Y) != (b[1] > Y)
        x_cross = a[0] + (Y - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
        inside ^= crosses & (X < x_cross)
    layer[i0:i1, j0:j1][inside] = 1


def rasterize_map(elements: Sequence[MapElement], grid: GridSpec, channels: Sequence[str] = TOY_MAP_CHANNELS) -> MapRaster:
    """Paint polylines one cell wide and fill polygons, one semantic per channel."""
    channels = tuple(channels)
    data = np.zeros((grid.rows, grid.cols, len(channels)), dtype=np.uint8)
    for el in elements:
        if el.semantic not in channels:
            raise ValueError(f"unknown map semantic {el.semantic!r}")
        layer = data[:, :, channels.index(el.semantic)]
        if el.closed:
            _paint_polygon(layer, grid, el.points)
        else:
            _paint_polyline(layer, grid, el.points)
    return MapRaster(data, grid, channels)


# ---------------------------------------------------------------------------
# Rotated RoI align


@dataclass(frozen=True)
class RroiConfig:
    """Rotated region around a box: ``front`` m ahead, ``back`` m behind, ``width`` m across."""

    length: float = 16.0
    width: float = 10.0
    front: float = 12.0
    back: float = 4.0
    resolution: float = 1.0

    def __post_init__(self):
        if self.resolution <= 0 or self.length <= 0 or self.width <= 0:
            raise ValueError("region dimensions and resolution must be positive")
        if abs(self.front + self.back - self.length) > 1e-9:
            raise ValueError("front + back must equal length")
        for extent in (self.length, self.width):
            n = extent / self.resolution
            if abs(n - round(n)) > 1e-9:
                raise ValueError("resolution must divide the region size")

    @classmethod
    def full_scale(cls) -> "RroiConfig":
        return cls(length=41.0, width=25.0, front=31.0, back=10.0, resolution=1.0)

    @property
    def rows(self) -> int:
        return int(round(self.length / self.resolution))

    @property
    def cols(self) -> int:
        return int(round(self.width / self.resolution))


def rroi_sample_points(box: OrientedBox, config: RroiConfig) -> np.ndarray:
    """World coordinates (rows, cols, 2) of the output cell centers."""
    u = -config.back + (np.arange(config.rows) + 0.5) * config.resolution
    v = -0.5 * config.width + (np.arange(config.cols) + 0.5) * config.resolution
    U, V = np.meshgrid(u, v, indexing="ij")
    c, s = math.cos(box.heading), math.sin(box.heading)
    return np.stack([box.center[0] + c * U - s * V, box.center[1] + s * U + c * V], axis=-1)


def _bilinear_matrix(points: np.ndarray, grid: GridSpec) -> sp.csr_matrix:
    """Sparse (n_points, rows*cols) interpolation weights; outside corners read zero."""
    fi = (points[:, 0] - grid.x_min) / grid.resolution - 0.5
    fj = (points[:, 1] - grid.y_min) / grid.resolution - 0.5
    i0 = np.floor(fi).astype(np.int64)
    j0 = np.floor(fj).astype(np.int64)
    di, dj = fi - i0, fj - j0
    rows, cols, vals = [], [], []
    n = len(points)
    for oi, oj, w in (
        (0, 0, (1 - di) * (1 - dj)),
        (1, 0, di * (1 - dj)),
        (0, 1, (1 - di) * dj),
        (1, 1, di * dj),
    ):
        ii, jj = i0 + oi, j0 + oj
        ok = (ii >= 0) & (ii < grid.rows) & (jj >= 0) & (jj < grid.cols) & (w != 0)
        rows.append(np.nonzero(ok)[0])
        cols.append(ii[ok] * grid.cols + jj[ok])
        vals.append(w[ok])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, grid.rows * grid.cols)
    )


def rroi_align(features, grid: GridSpec, boxes, config: RroiConfig = RroiConfig()) -> Tensor:
    """Bilinearly sample rotated regions around ``boxes`` from a (C, H, W) feature map.

    Accepts a single box (returns (C, rows, cols)) or a sequence of boxes
    (returns (N, C, rows, cols)). Differentiable with respect to ``features``.
    """
    features = as_tensor(features)
    single = isinstance(boxes, OrientedBox)
    boxes = [boxes] if single else list(boxes)
    C, H, W = features.shape
    if (H, W) != (grid.rows, grid.cols):
        raise ValueError(f"feature map {features.shape} does not match grid {grid.rows}x{grid.cols}")
    n, r, c = len(boxes), config.rows, config.cols
    if n == 0:
        return Tensor(np.zeros((0, C, r, c)))
    pts = np.concatenate([rroi_sample_points(b, config).reshape(-1, 2) for b in boxes])
    S = _bilinear_matrix(pts, grid)
    flat = features.data.reshape(C, H * W)
    out = (S @ flat.T).T.reshape(C, n, r, c).transpose(1, 0, 2, 3)

    def backward(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(C, n * r * c)
        return ((S.T @ g2.T).T.reshape(C, H, W),)

    result = custom_op([features], np.ascontiguousarray(out), backward)
    return result[0] if single else result


def feature_index(features, grid: GridSpec, box: OrientedBox):
    """Feature column of the grid cell nearest the box center (heading ignored).

    On a cell boundary the upper cell wins on both axes.
    """
    x, y = box.center
    if not grid.contains(x, y):
        raise ValueError(f"box center ({x}, {y}) outside the feature extent")
    i = int(math.floor((x - grid.x_min) / grid.resolution))
    j = int(math.floor((y - grid.y_min) / grid.resolution))
    return as_tensor(features)[:, i, j]
