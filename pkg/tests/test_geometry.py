import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spagnn.geometry import (
    OrientedBox,
    Pose2,
    SE2Transform,
    box_iou,
    nms,
    se2_compose,
    se2_embed,
    se2_invert,
    se2_relative,
    wrap_angle,
)

angles = st.floats(-10.0, 10.0)
coords = st.floats(-100.0, 100.0)


def raster_iou(a: OrientedBox, b: OrientedBox, cell: float = 1e-3) -> float:
    """Dense grid estimate of IoU from cell-center membership."""
    corners = np.vstack([a.corners(), b.corners()])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    xs = np.arange(lo[0] + cell / 2, hi[0], cell)
    ys = np.arange(lo[1] + cell / 2, hi[1], cell)
    X, Y = np.meshgrid(xs, ys, indexing="ij")

    def inside(box):
        c, s = math.cos(box.heading), math.sin(box.heading)
        dx, dy = X - box.center[0], Y - box.center[1]
        u, v = c * dx + s * dy, -s * dx + c * dy
        return (np.abs(u) <= box.length / 2) & (np.abs(v) <= box.width / 2)

    ia, ib = inside(a), inside(b)
    return (ia & ib).sum() / (ia | ib).sum()


class TestTransforms:
    def test_identity_compose(self):
        t = SE2Transform(0.3, (1.0, -2.0))
        out = se2_compose(SE2Transform.identity(), t)
        assert out.rotation == pytest.approx(t.rotation)
        assert out.translation == pytest.approx(t.translation)

    def test_rotation_then_translation(self):
        t = SE2Transform(math.pi / 2, (1.0, 0.0))
        np.testing.assert_allclose(t.apply([1.0, 0.0]), [1.0, 1.0], atol=1e-15)

    def test_compose_applies_b_first(self):
        a = SE2Transform(0.7, (1.0, 2.0))
        b = SE2Transform(-1.3, (-0.5, 4.0))
        p = np.array([0.3, -0.8])
        np.testing.assert_allclose(se2_compose(a, b).apply(p), a.apply(b.apply(p)), atol=1e-12)

    @given(angles, coords, coords)
    def test_inverse_law(self, rot, tx, ty):
        t = SE2Transform(rot, (tx, ty))
        ident = se2_compose(t, se2_invert(t))
        assert abs(wrap_angle(ident.rotation)) <= 1e-12
        assert np.allclose(ident.translation, 0.0, atol=1e-12)

    def test_relative_examples(self):
        ref = Pose2(0.0, 0.0, math.pi / 2)
        out = se2_relative(ref, Pose2(3.0, 4.0, 0.0))
        assert (out.x, out.y, out.theta) == pytest.approx((4.0, -3.0, -math.pi / 2))
        same = se2_relative(Pose2(1.0, 2.0, 0.4), Pose2(1.0, 2.0, 0.4))
        assert (same.x, same.y, same.theta) == pytest.approx((0.0, 0.0, 0.0), abs=1e-15)

    @given(coords, coords, angles, coords, coords, angles)
    def test_relative_round_trip(self, x0, y0, t0, x1, y1, t1):
        ref, target = Pose2(x0, y0, t0), Pose2(x1, y1, t1)
        local = se2_relative(ref, target)
        assert -math.pi < local.theta <= math.pi
        back = se2_embed(ref, local)
        assert back.x == pytest.approx(target.x, abs=1e-12 * max(1.0, abs(x0) + abs(x1)))
        assert back.y == pytest.approx(target.y, abs=1e-12 * max(1.0, abs(y0) + abs(y1)))
        assert abs(wrap_angle(back.theta - target.theta)) <= 1e-12

    def test_wrap_angle_range(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


class TestBoxIou:
    def test_identical(self):
        b = OrientedBox((1.0, 2.0), 4.0, 2.0, 0.3)
        assert box_iou(b, b) == pytest.approx(1.0, abs=1e-12)

    def test_offset_axis_aligned(self):
        a = OrientedBox((0.0, 0.0), 2.0, 2.0, 0.0)
        b = OrientedBox((1.0, 0.0), 2.0, 2.0, 0.0)
        assert box_iou(a, b) == pytest.approx(1 / 3, abs=1e-12)

    def test_rotated_square_against_raster_oracle(self):
        a = OrientedBox((0.0, 0.0), 1.0, 1.0, 0.0)
        b = OrientedBox((0.0, 0.0), 1.0, 1.0, math.pi / 4)
        oracle = raster_iou(a, b)
        assert oracle == pytest.approx(0.7071, abs=1e-3)
        assert box_iou(a, b) == pytest.approx(oracle, abs=1e-3)

    def test_disjoint(self):
        a = OrientedBox((0.0, 0.0), 2.0, 1.0, 0.2)
        b = OrientedBox((10.0, 0.0), 2.0, 1.0, -0.4)
        assert box_iou(a, b) == 0.0

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            OrientedBox((0.0, 0.0), 0.0, 1.0, 0.0)

    @settings(max_examples=200)
    @given(
        st.tuples(coords, coords, st.floats(0.5, 6), st.floats(0.5, 3), angles),
        st.tuples(st.floats(-4, 4), st.floats(-4, 4), st.floats(0.5, 6), st.floats(0.5, 3), angles),
        st.tuples(angles, coords, coords),
    )
    def test_symmetric_and_rigid_invariant(self, pa, pb, g):
        a = OrientedBox((pa[0], pa[1]), pa[2], pa[3], pa[4])
        b = OrientedBox((pa[0] + pb[0], pa[1] + pb[1]), pb[2], pb[3], pb[4])
        iou = box_iou(a, b)
        assert 0.0 <= iou <= 1.0
        assert iou == pytest.approx(box_iou(b, a), abs=1e-9)
        t = SE2Transform(g[0], (g[1], g[2]))
        assert box_iou(t.apply_box(a), t.apply_box(b)) == pytest.approx(iou, abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_pairs_match_raster(self, seed):
        rng = np.random.default_rng(seed)
        a = OrientedBox(tuple(rng.uniform(-1, 1, 2)), rng.uniform(1, 3), rng.uniform(0.5, 1.5), rng.uniform(-3, 3))
        b = OrientedBox(tuple(rng.uniform(-1, 1, 2)), rng.uniform(1, 3), rng.uniform(0.5, 1.5), rng.uniform(-3, 3))
        assert box_iou(a, b) == pytest.approx(raster_iou(a, b, cell=2e-3), abs=3e-3)


class TestNms:
    def test_single(self):
        b = OrientedBox((0, 0), 4, 2, 0)
        assert nms([(0.5, b)], 0.1) == [(0.5, b)]

    def test_overlapping_pair(self):
        a = OrientedBox((0, 0), 2, 2, 0)
        b = OrientedBox((2 / 3, 0), 2, 2, 0)  # IoU 0.5
        assert box_iou(a, b) == pytest.approx(0.5)
        kept = nms([(0.4, a), (0.9, b)], 0.1)
        assert kept == [(0.9, b)]

    def test_disjoint_pair(self):
        a = OrientedBox((0, 0), 2, 2, 0)
        b = OrientedBox((5, 0), 2, 2, 0)
        assert [s for s, _ in nms([(0.4, a), (0.9, b)], 0.1)] == [0.9, 0.4]

    def test_tie_break_prefers_lower_index(self):
        a = OrientedBox((0, 0), 2, 2, 0)
        b = OrientedBox((0.1, 0), 2, 2, 0)
        kept = nms([(0.5, a), (0.5, b)], 0.1)
        assert kept == [(0.5, a)]

    def test_empty(self):
        assert nms([], 0.1) == []

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.floats(0, 1), st.floats(-5, 5), st.floats(-5, 5), angles), max_size=25, unique_by=lambda t: t[0]))
    def test_contract(self, raw):
        cands = [(s, OrientedBox((x, y), 3.0, 1.5, h)) for s, x, y, h in raw]
        kept = nms(cands, 0.1)
        scores = [s for s, _ in kept]
        assert scores == sorted(scores, reverse=True)
        assert all(k in cands for k in kept)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert box_iou(kept[i][1], kept[j][1]) <= 0.1
        assert nms(cands, 0.1) == kept
