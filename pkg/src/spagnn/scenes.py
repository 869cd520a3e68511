"""Synthetic interacting traffic, a planar ray-cast LiDAR and the dataset file format.

Two scenario kinds are simulated at 10 Hz. ``following`` places platoons on a
two-way straight road under the Intelligent Driver Model, optionally held by
a red light that turns green partway through. ``intersection`` runs a
four-way stop where vehicles queue, stop, and enter in arrival order when no
conflicting vehicle occupies the junction.

Each scenario is stored in the frame of the ego vehicle at the current
frame. Ego is a slow-moving vehicle parked off the road; it carries the
sensor and is never labeled.

Dataset files hold one JSON object per line (UTF-8). Every record carries
``"schema": "sv1"`` and the fields written by :func:`scenario_to_record`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import OrientedBox, boxes_overlap, wrap_angle
from .raster import BevConfig, MapElement, SweepSet

__all__ = [
    "SCHEMA_VERSION",
    "DT",
    "FORECAST_TIMES",
    "IdmParams",
    "idm_accel",
    "idm_equilibrium_gap",
    "simulate_lane",
    "LidarConfig",
    "cast_rays",
    "simulate_lidar",
    "Agent",
    "Label",
    "Scenario",
    "ScenarioError",
    "gen_scenario",
    "generate_dataset",
    "scenario_to_record",
    "scenario_from_record",
    "write_dataset",
    "read_dataset",
    "tracks_collide",
]

SCHEMA_VERSION = "sv1"
DT = 0.1
FORECAST_TIMES = np.arange(7) * 0.5
FORECAST_STRIDE = 5  # frames between forecast timesteps
N_FUTURE_FRAMES = 30
KINDS = ("following", "intersection")

LANE_WIDTH = 3.5
JUNCTION_HALF = 7.0
ROAD_HALF_LENGTH = 150.0


class ScenarioError(RuntimeError):
    """Raised when a valid scenario cannot be produced within the retry budget."""


# ---------------------------------------------------------------------------
# Intelligent Driver Model


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float = 12.0
    time_headway: float = 1.5
    min_gap: float = 2.0
    max_accel: float = 1.5
    comfort_decel: float = 2.0
    delta: float = 4.0


def idm_accel(v, gap, dv, params: IdmParams = IdmParams(), desired_speed=None):
    """IDM acceleration for speed ``v``, bumper gap ``gap`` and closing speed ``dv``.

    ``gap = inf`` gives the free-road term only.
    """
    v = np.asarray(v, dtype=float)
    v0 = params.desired_speed if desired_speed is None else np.asarray(desired_speed, dtype=float)
    p = params
    s_star = p.min_gap + np.maximum(0.0, v * p.time_headway + v * dv / (2.0 * math.sqrt(p.max_accel * p.comfort_decel)))
    gap = np.maximum(np.asarray(gap, dtype=float), 1e-3)
    with np.errstate(divide="ignore"):
        interact = np.where(np.isinf(gap), 0.0, (s_star / gap) ** 2)
    return p.max_accel * (1.0 - (v / v0) ** p.delta - interact)


def idm_equilibrium_gap(v: float, params: IdmParams = IdmParams(), desired_speed: float | None = None) -> float:
    """Bumper gap at which a follower at speed ``v`` behind an equal-speed leader does not accelerate."""
    v0 = params.desired_speed if desired_speed is None else desired_speed
    ratio = 1.0 - (v / v0) ** params.delta
    if ratio <= 0:
        raise ValueError("no equilibrium at or above the desired speed")
    return (params.min_gap + v * params.time_headway) / math.sqrt(ratio)


def _advance(s, v, a, dt):
    """Ballistic update that never reverses."""
    v_new = v + a * dt
    stopping = v_new < 0
    ds = np.where(stopping, np.where(a < 0, -v * v / (2.0 * np.where(a < 0, a, -1.0)), 0.0), v * dt + 0.5 * a * dt * dt)
    return s + np.maximum(ds, 0.0), np.maximum(v_new, 0.0)


def simulate_lane(
    positions,
    speeds,
    lengths,
    n_steps: int,
    desired_speeds=None,
    params: IdmParams = IdmParams(),
    stop_line: float | None = None,
    release_step: int | None = None,
    dt: float = DT,
):
    """Single-lane IDM platoon; vehicles are ordered front to back.

    ``positions`` are center arc positions. An optional red stop line at
    ``stop_line`` holds every vehicle that could still stop behind it until
    ``release_step``. Returns ``(s, v)`` arrays of shape (n_steps + 1, N).
    """
    s = np.asarray(positions, dtype=float).copy()
    v = np.asarray(speeds, dtype=float).copy()
    lengths = np.asarray(lengths, dtype=float)
    n = len(s)
    v0 = np.full(n, params.desired_speed) if desired_speeds is None else np.asarray(desired_speeds, dtype=float)
    if np.any(np.diff(s) >= 0):
        raise ValueError("positions must be strictly decreasing (front vehicle first)")
    obeys = np.zeros(n, dtype=bool)
    if stop_line is not None:
        room = stop_line - s - lengths / 2
        obeys = room >= v * v / (2 * 4.0)
    s_hist, v_hist = [s.copy()], [v.copy()]
    for step in range(n_steps):
        gap = np.full(n, np.inf)
        dv = np.zeros(n)
        gap[1:] = s[:-1] - s[1:] - (lengths[:-1] + lengths[1:]) / 2
        dv[1:] = v[1:] - v[:-1]
        if stop_line is not None and (release_step is None or step < release_step):
            room = stop_line - s - lengths / 2
            use = obeys & (room < gap)
            gap = np.where(use, room, gap)
            dv = np.where(use, v, dv)
        a = idm_accel(v, gap, dv, params, v0)
        s, v = _advance(s, v, a, dt)
        s_hist.append(s.copy())
        v_hist.append(v.copy())
    return np.array(s_hist), np.array(v_hist)


# ---------------------------------------------------------------------------
# Paths


class _Path:
    """Polyline parameterised by arc length; extrapolates straight past both ends."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=float)
        seg = np.diff(self.points, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        keep = self.seg_len > 1e-9
        self.points = np.vstack([self.points[:1], self.points[1:][keep]])
        seg = np.diff(self.points, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.dirs = seg / self.seg_len[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])

    def pose(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        k = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.seg_len) - 1)
        xy = self.points[k] + (s - self.cum[k])[:, None] * self.dirs[k]
        heading = np.arctan2(self.dirs[k, 1], self.dirs[k, 0])
        return xy, heading

    def project(self, xy):
        """Arc position and distance of the nearest path point for each row of ``xy``."""
        xy = np.atleast_2d(xy)
        a = self.points[:-1]
        d = xy[:, None, :] - a[None]
        t = np.clip(np.einsum("nsk,sk->ns", d, self.dirs), 0.0, self.seg_len)
        near = a[None] + t[..., None] * self.dirs[None]
        dist = np.hypot(*(xy[:, None, :] - near).transpose(2, 0, 1))
        k = np.argmin(dist, axis=1)
        rows = np.arange(len(xy))
        return self.cum[k] + t[rows, k], dist[rows, k]


def _rot(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def _bezier(p0, p1, p2, p3, n: int = 24) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * p1 + 3 * (1 - t) * t**2 * p2 + t**3 * p3


# ---------------------------------------------------------------------------
# Scenario containers


@dataclass
class Agent:
    """A vehicle track; ``track`` rows are (x, y, theta, speed) per frame."""

    id: int
    length: float
    width: float
    track: np.ndarray

    def box(self, frame: int) -> OrientedBox:
        x, y, th, _ = self.track[frame]
        return OrientedBox((float(x), float(y)), self.length, self.width, float(th))


@dataclass
class Label:
    """Ground truth for one visible vehicle: current box and future (x, y, theta)."""

    agent_id: int
    box: OrientedBox
    future: np.ndarray


@dataclass
class Scenario:
    seed: int
    kind: str
    current_frame: int
    ego: Agent
    agents: list[Agent]
    map_elements: list[MapElement]
    sweeps: SweepSet
    labels: list[Label] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return len(self.ego.track)


# ---------------------------------------------------------------------------
# LiDAR


@dataclass(frozen=True)
class LidarConfig:
    n_beams: int = 720
    max_range: float = 60.0
    n_sweeps: int = 3
    z_band: tuple[float, float] = (0.3, 1.6)


def cast_rays(origin, angles, boxes: Sequence[OrientedBox], max_range: float):
    """First hit of each ray against box outlines.

    Returns ``(points, owner)`` for the rays that hit something: points as an
    (n, 2) array and the index of the box each point lies on.
    """
    origin = np.asarray(origin, dtype=float)
    angles = np.asarray(angles, dtype=float)
    if not boxes:
        return np.zeros((0, 2)), np.zeros(0, dtype=np.int64)
    corners = np.stack([b.corners() for b in boxes])
    a = corners.reshape(-1, 2)
    b = np.roll(corners, -1, axis=1).reshape(-1, 2)
    owner = np.repeat(np.arange(len(boxes)), 4)
    e = b - a
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    w = a - origin
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[None, :, 0] * e[None, :, 1] - w[None, :, 1] * e[None, :, 0]) / denom
        u = (w[None, :, 0] * d[:, None, 1] - w[None, :, 1] * d[:, None, 0]) / denom
    ok = (np.abs(denom) > 1e-12) & (t > 0) & (t <= max_range) & (u >= 0) & (u <= 1)
    t = np.where(ok, t, np.inf)
    best = np.argmin(t, axis=1)
    t_best = t[np.arange(len(angles)), best]
    hit = np.isfinite(t_best)
    pts = origin + t_best[hit, None] * d[hit]
    return pts, owner[best[hit]]


def simulate_lidar(ego: Agent, agents: Sequence[Agent], current_frame: int, config: LidarConfig, rng: np.random.Generator):
    """Sweeps from the ego sensor, re-expressed in the frame the ego track is given in.

    Sweep ``k`` is taken at frame ``current_frame - k`` with rays uniform in
    the ego body frame. Returns the :class:`SweepSet` and, per sweep, the
    agent index hit by each point.
    """
    if config.n_sweeps > current_frame + 1:
        raise ValueError("not enough past frames for the requested sweeps")
    angles = 2.0 * math.pi * np.arange(config.n_beams) / config.n_beams
    sweeps, owners = [], []
    for k in range(config.n_sweeps):
        f = current_frame - k
        ex, ey, eth, _ = ego.track[f]
        c, s = math.cos(eth), math.sin(eth)
        local = []
        for ag in agents:
            x, y, th, _ = ag.track[f]
            dx, dy = x - ex, y - ey
            local.append(OrientedBox((c * dx + s * dy, -s * dx + c * dy), ag.length, ag.width, th - eth))
        pts, own = cast_rays((0.0, 0.0), angles, local, config.max_range)
        world = np.column_stack([ex + c * pts[:, 0] - s * pts[:, 1], ey + s * pts[:, 0] + c * pts[:, 1]])
        z = rng.uniform(*config.z_band, size=len(pts))
        sweeps.append(np.column_stack([world, z]))
        owners.append(own)
    return SweepSet(sweeps), owners


# ---------------------------------------------------------------------------
# Ground-truth checks


def tracks_collide(agents: Sequence[Agent], frames: Iterable[int] | None = None) -> bool:
    """True if any two vehicles overlap with positive area at a shared frame."""
    if len(agents) < 2:
        return False
    tracks = np.stack([a.track for a in agents])
    radius = np.array([math.hypot(a.length, a.width) / 2 for a in agents])
    frames = range(tracks.shape[1]) if frames is None else frames
    for f in frames:
        xy = tracks[:, f, :2]
        dist = np.hypot(*(xy[:, None] - xy[None]).transpose(2, 0, 1))
        near = dist < radius[:, None] + radius[None]
        for i, j in zip(*np.nonzero(np.triu(near, 1))):
            if boxes_overlap(agents[i].box(f), agents[j].box(f)):
                return True
    return False


# ---------------------------------------------------------------------------
# Scenario generation


def _vehicle_dims(rng):
    return float(rng.uniform(4.0, 5.0)), float(rng.uniform(1.8, 2.1))


def _following(n_agents: int, n_frames: int, rng: np.random.Generator):
    """Platoons on a two-way road along x. Returns (agents, map elements, ego spot sampler)."""
    lanes = [
        _Path([[-ROAD_HALF_LENGTH, -LANE_WIDTH / 2], [ROAD_HALF_LENGTH, -LANE_WIDTH / 2]]),
        _Path([[ROAD_HALF_LENGTH, LANE_WIDTH / 2], [-ROAD_HALF_LENGTH, LANE_WIDTH / 2]]),
    ]
    counts = np.bincount(rng.integers(0, 2, size=n_agents), minlength=2)
    agents: list[tuple[float, float, np.ndarray]] = []
    for lane, count in zip(lanes, counts):
        if count == 0:
            continue
        lengths, widths, s0, v0s, speeds = [], [], [], [], []
        front = float(rng.uniform(ROAD_HALF_LENGTH - 10, ROAD_HALF_LENGTH + 40))
        lead = front
        for k in range(count):
            length, width = _vehicle_dims(rng)
            speed = float(rng.uniform(3.0, 11.0))
            v0 = float(rng.uniform(max(speed + 0.5, 9.0), 14.0))
            if k > 0:
                gap = idm_equilibrium_gap(speed, desired_speed=v0) * rng.uniform(0.6, 1.6)
                front -= (lengths[-1] + length) / 2 + gap
            lengths.append(length)
            widths.append(width)
            s0.append(front)
            v0s.append(v0)
            speeds.append(speed)
        stop_line, release = None, None
        if rng.random() < 0.6:
            stop_line = float(lead + rng.uniform(10.0, 60.0))
            release = int(rng.integers(n_frames // 3, 2 * n_frames)) if rng.random() < 0.7 else None
        s, v = simulate_lane(s0, speeds, lengths, n_frames - 1, v0s, stop_line=stop_line, release_step=release)
        xy, heading = lane.pose(s.reshape(-1))
        xy = xy.reshape(n_frames, count, 2)
        heading = heading.reshape(n_frames, count)
        for i in range(count):
            agents.append((lengths[i], widths[i], np.column_stack([xy[:, i], heading[:, i], v[:, i]])))
    elements = [
        MapElement("lane", lanes[0].points),
        MapElement("lane", lanes[1].points),
        MapElement(
            "road",
            [[-ROAD_HALF_LENGTH, -LANE_WIDTH], [ROAD_HALF_LENGTH, -LANE_WIDTH], [ROAD_HALF_LENGTH, LANE_WIDTH], [-ROAD_HALF_LENGTH, LANE_WIDTH]],
            closed=True,
        ),
    ]

    def ego_spot():
        return np.array([rng.uniform(-20, 20), rng.choice([-1, 1]) * rng.uniform(9, 18)])

    return agents, elements, ego_spot


@dataclass
class _Route:
    path: _Path
    entry: int
    exit: int
    stop_s: float
    exit_s: float


def _junction_routes():
    routes = []
    for d in range(4):
        phi = d * math.pi / 2
        entry_end = _rot(phi) @ np.array([-JUNCTION_HALF, -LANE_WIDTH / 2])
        entry_start = _rot(phi) @ np.array([-ROAD_HALF_LENGTH, -LANE_WIDTH / 2])
        for turn in (0, 1, -1):
            d_out = (d + turn) % 4
            phi2 = d_out * math.pi / 2
            exit_start = _rot(phi2) @ np.array([JUNCTION_HALF, -LANE_WIDTH / 2])
            exit_end = _rot(phi2) @ np.array([ROAD_HALF_LENGTH, -LANE_WIDTH / 2])
            k = 0.4 * np.linalg.norm(exit_start - entry_end)
            u = np.array([math.cos(phi), math.sin(phi)])
            u2 = np.array([math.cos(phi2), math.sin(phi2)])
            conn = _bezier(entry_end, entry_end + k * u, exit_start - k * u2, exit_start)
            path = _Path(np.vstack([entry_start, conn, exit_end]))
            stop_s = float(np.linalg.norm(entry_end - entry_start))
            exit_s = stop_s + float(np.sum(np.hypot(*np.diff(conn, axis=0).T)))
            routes.append(_Route(path, d, d_out, stop_s, exit_s))
    conflict = np.zeros((len(routes), len(routes)), dtype=bool)
    for i, a in enumerate(routes):
        for j, b in enumerate(routes):
            if i == j or a.entry == b.entry:
                continue
            sa = np.linspace(a.stop_s, a.exit_s + 5, 40)
            pa, _ = a.path.pose(sa)
            _, dist = b.path.project(pa)
            sb, _ = b.path.project(pa)
            inside = (sb >= b.stop_s - 1) & (sb <= b.exit_s + 5)
            conflict[i, j] = bool(np.any((dist < 3.0) & inside))
    return routes, conflict


_ROUTES, _CONFLICT = None, None


def _intersection(n_agents: int, n_frames: int, rng: np.random.Generator, params: IdmParams = IdmParams()):
    global _ROUTES, _CONFLICT
    if _ROUTES is None:
        _ROUTES, _CONFLICT = _junction_routes()
    routes, conflict = _ROUTES, _CONFLICT

    # spawn
    route_id, s, v, v0, lengths, widths = [], [], [], [], [], []
    attempts = 0
    while len(route_id) < n_agents and attempts < 50 * n_agents:
        attempts += 1
        r = int(rng.integers(len(routes)))
        rt = routes[r]
        where = rng.random()
        if where < 0.75:
            pos = float(rt.stop_s - rng.uniform(3.0, 60.0))
        elif where < 0.85:
            pos = float(rng.uniform(rt.stop_s + 1.0, rt.exit_s - 1.0))
        else:
            pos = float(rt.exit_s + rng.uniform(3.0, 25.0))
        length, width = _vehicle_dims(rng)
        box = OrientedBox(tuple(rt.path.pose(pos)[0][0]), length + 3.0, width + 0.6, float(rt.path.pose(pos)[1][0]))
        clash = False
        for q, sq, lq, wq in zip(route_id, s, lengths, widths):
            rq = routes[q]
            other = OrientedBox(tuple(rq.path.pose(sq)[0][0]), lq + 3.0, wq + 0.6, float(rq.path.pose(sq)[1][0]))
            if boxes_overlap(box, other):
                clash = True
                break
            in_a = rt.stop_s <= pos <= rt.exit_s
            in_b = rq.stop_s <= sq <= rq.exit_s
            if in_a and in_b and conflict[r, q]:
                clash = True
                break
        if clash:
            continue
        route_id.append(r)
        s.append(pos)
        lengths.append(length)
        widths.append(width)
        v0.append(float(rng.uniform(8.0, 13.0)))
        if pos < rt.stop_s:
            room = rt.stop_s - pos - length / 2
            v.append(float(min(rng.uniform(0.0, 10.0), math.sqrt(2 * 1.5 * max(room, 0.0)))))
        else:
            v.append(float(rng.uniform(3.0, 8.0)))

    n = len(route_id)
    s, v, v0 = np.array(s), np.array(v), np.array(v0)
    lengths, widths = np.array(lengths), np.array(widths)
    stop_s = np.array([routes[r].stop_s for r in route_id])
    exit_s = np.array([routes[r].exit_s for r in route_id])
    granted = s >= stop_s
    arrival = np.full(n, np.inf)
    hist = []
    for step in range(n_frames):
        xy = np.zeros((n, 2))
        heading = np.zeros(n)
        for i in range(n):
            p, h = routes[route_id[i]].path.pose(s[i])
            xy[i], heading[i] = p[0], h[0]
        hist.append(np.column_stack([xy, heading, v]))
        if step == n_frames - 1:
            break
        # arrivals and grants at the stop line
        room = stop_s - s - lengths / 2
        waiting = ~granted & (room < 1.5) & (v < 0.3)
        arrival = np.where(waiting & np.isinf(arrival), step, arrival)
        occupied = granted & (s - lengths / 2 < exit_s + 1.0)
        for i in sorted(np.nonzero(waiting)[0], key=lambda i: (arrival[i], i)):
            if not any(occupied[j] and conflict[route_id[i], route_id[j]] for j in range(n) if j != i):
                granted[i] = True
                occupied[i] = True
        gap = np.full(n, np.inf)
        dv = np.zeros(n)
        for i in range(n):
            path = routes[route_id[i]].path
            if n > 1:
                others = [j for j in range(n) if j != i]
                sp, lat = path.project(xy[others])
                for j, sj, dj in zip(others, sp, lat):
                    if sj <= s[i] or sj - s[i] > 80 or dj > (widths[i] + widths[j]) / 2 + 0.6:
                        continue
                    g = sj - s[i] - (lengths[i] + lengths[j]) / 2
                    if g < gap[i]:
                        _, hp = path.pose(sj)
                        gap[i] = g
                        dv[i] = v[i] - v[j] * math.cos(heading[j] - hp[0])
            if not granted[i] and room[i] < gap[i]:
                gap[i] = room[i]
                dv[i] = v[i]
        a = idm_accel(v, gap, dv, params, v0)
        s, v = _advance(s, v, a, DT)
    tracks = np.stack(hist, axis=1)
    agents = [(float(lengths[i]), float(widths[i]), tracks[i]) for i in range(n)]

    elements = []
    for d in range(4):
        phi = d * math.pi / 2
        R = _rot(phi)
        elements.append(MapElement("lane", [R @ [-ROAD_HALF_LENGTH, -LANE_WIDTH / 2], R @ [-JUNCTION_HALF, -LANE_WIDTH / 2]]))
        elements.append(MapElement("lane", [R @ [JUNCTION_HALF, -LANE_WIDTH / 2], R @ [ROAD_HALF_LENGTH, -LANE_WIDTH / 2]]))
    for horizontal in (True, False):
        rect = np.array([[-ROAD_HALF_LENGTH, -LANE_WIDTH], [ROAD_HALF_LENGTH, -LANE_WIDTH], [ROAD_HALF_LENGTH, LANE_WIDTH], [-ROAD_HALF_LENGTH, LANE_WIDTH]])
        elements.append(MapElement("road", rect if horizontal else rect[:, ::-1], closed=True))
    h = JUNCTION_HALF
    elements.append(MapElement("intersection", [[-h, -h], [h, -h], [h, h], [-h, h]], closed=True))

    def ego_spot():
        return np.array([rng.choice([-1, 1]) * rng.uniform(12, 25), rng.choice([-1, 1]) * rng.uniform(12, 25)])

    return agents, elements, ego_spot


def _to_frame(track: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Express (x, y, theta, v) rows in the frame of pose ``origin`` = (x, y, theta)."""
    c, s = math.cos(origin[2]), math.sin(origin[2])
    dx, dy = track[:, 0] - origin[0], track[:, 1] - origin[1]
    return np.column_stack([c * dx + s * dy, -s * dx + c * dy, wrap_angle(track[:, 2] - origin[2]), track[:, 3]])


def _quantize(a: np.ndarray, step: float) -> np.ndarray:
    return np.round(a / step) * step


def gen_scenario(
    kind: str,
    n_agents: int,
    seed: int,
    lidar: LidarConfig = LidarConfig(),
    bev: BevConfig = BevConfig(),
    max_retries: int = 20,
) -> Scenario:
    """Generate one scenario; ``kind`` is ``following``, ``intersection`` or ``mixed``."""
    if n_agents < 1:
        raise ValueError("n_agents must be at least 1")
    if kind not in KINDS + ("mixed",):
        raise ValueError(f"unknown scenario kind {kind!r}")
    root = np.random.default_rng(np.random.SeedSequence([seed, 0x5CE7E]))
    if kind == "mixed":
        kind = KINDS[int(root.integers(2))]
    current = lidar.n_sweeps - 1
    n_frames = current + 1 + N_FUTURE_FRAMES
    for attempt in range(max_retries):
        rng = np.random.default_rng(np.random.SeedSequence([seed, attempt]))
        warmup = int(rng.integers(10, 40))
        total = warmup + n_frames
        builder = _following if kind == "following" else _intersection
        raw, elements, ego_spot = builder(n_agents, total, rng)
        # ego: a slow vehicle off the road, heading anywhere
        e_xy = ego_spot()
        e_th = float(rng.uniform(-math.pi, math.pi))
        e_v = float(rng.uniform(0.0, 1.5))
        t = (np.arange(n_frames) - current) * DT
        e_track = np.column_stack(
            [e_xy[0] + e_v * t * math.cos(e_th), e_xy[1] + e_v * t * math.sin(e_th), np.full(n_frames, e_th), np.full(n_frames, e_v)]
        )
        origin = e_track[current, :3].copy()
        ego = Agent(-1, 4.5, 1.9, _quantize(_to_frame(e_track, origin), 1e-6))
        agents = [
            Agent(i, round(length, 4), round(width, 4), _quantize(_to_frame(track[warmup:], origin), 1e-6))
            for i, (length, width, track) in enumerate(raw)
        ]
        if tracks_collide(agents + [ego]):
            continue
        c, s = math.cos(origin[2]), math.sin(origin[2])
        rot = np.array([[c, s], [-s, c]])
        local_elements = [MapElement(e.semantic, _quantize((e.points - origin[:2]) @ rot.T, 1e-6), e.closed) for e in elements]
        sweeps, owners = simulate_lidar(ego, agents, current, lidar, rng)
        sweeps = SweepSet([_quantize(p, 1e-3) for p in sweeps.points])
        grid = bev.grid
        labels = []
        for i, ag in enumerate(agents):
            n_now = int(np.sum(owners[0] == i))
            n_past = sum(int(np.sum(o == i)) for o in owners[1:3])
            x, y = ag.track[current, :2]
            if (n_now >= 1 or n_past >= 2) and grid.contains(x, y):
                future = ag.track[current::FORECAST_STRIDE, :3][: len(FORECAST_TIMES)]
                labels.append(Label(ag.id, ag.box(current), future.copy()))
        return Scenario(seed, kind, current, ego, agents, local_elements, sweeps, labels)
    raise ScenarioError(f"seed {seed}: no collision-free {kind} scenario after {max_retries} attempts")


def generate_dataset(kind: str, count: int, seed: int, n_agents: tuple[int, int] = (4, 9), **kwargs) -> list[Scenario]:
    """``count`` scenarios with per-scenario seeds and agent counts derived from ``seed``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    seeds = rng.integers(0, 2**31 - 1, size=count)
    counts = rng.integers(n_agents[0], n_agents[1] + 1, size=count)
    return [gen_scenario(kind, int(n), int(s), **kwargs) for s, n in zip(seeds, counts)]


# ---------------------------------------------------------------------------
# Serialization


def _box_list(b: OrientedBox) -> list[float]:
    return [b.center[0], b.center[1], b.length, b.width, b.heading]


def _box_from(v) -> OrientedBox:
    return OrientedBox((float(v[0]), float(v[1])), float(v[2]), float(v[3]), float(v[4]))


def _agent_record(a: Agent) -> dict:
    return {"id": a.id, "length": a.length, "width": a.width, "track": a.track.tolist()}


def _agent_from(d: dict) -> Agent:
    return Agent(int(d["id"]), float(d["length"]), float(d["width"]), np.asarray(d["track"], dtype=float).reshape(-1, 4))


def scenario_to_record(sc: Scenario) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "seed": sc.seed,
        "kind": sc.kind,
        "dt": DT,
        "current_frame": sc.current_frame,
        "ego": _agent_record(sc.ego),
        "agents": [_agent_record(a) for a in sc.agents],
        "map": [{"semantic": e.semantic, "points": e.points.tolist(), "closed": e.closed} for e in sc.map_elements],
        "sweeps": [p.tolist() for p in sc.sweeps.points],
        "labels": [{"id": lb.agent_id, "box": _box_list(lb.box), "future": lb.future.tolist()} for lb in sc.labels],
    }


def scenario_from_record(rec: dict) -> Scenario:
    if rec.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema {rec.get('schema')!r}")
    return Scenario(
        seed=int(rec["seed"]),
        kind=str(rec["kind"]),
        current_frame=int(rec["current_frame"]),
        ego=_agent_from(rec["ego"]),
        agents=[_agent_from(a) for a in rec["agents"]],
        map_elements=[MapElement(m["semantic"], np.asarray(m["points"], dtype=float), bool(m["closed"])) for m in rec["map"]],
        sweeps=SweepSet([np.asarray(p, dtype=float).reshape(-1, 3) for p in rec["sweeps"]]),
        labels=[Label(int(lb["id"]), _box_from(lb["box"]), np.asarray(lb["future"], dtype=float).reshape(-1, 3)) for lb in rec["labels"]],
    )


def write_dataset(path, scenarios: Iterable[Scenario]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sc in scenarios:
            fh.write(json.dumps(scenario_to_record(sc), separators=(",", ":"), sort_keys=True))
            fh.write("\n")
            n += 1
    return n


def read_dataset(path) -> list[Scenario]:
    out = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(scenario_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return out
