
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spagnn.geometry import OrientedBox
from spagnn.nn import ParamStore, grad_check
from spagnn.raster import (
    EXTENDED_MAP_CHANNELS,
    BevConfig,
    GridSpec,
    MapElement,
    RroiConfig,
    SweepSet,
    feature_index,
    rasterize_map,
    rroi_align,
    voxelize,
)
from oracles import brute_force_rroi


class TestVoxelize:
    def test_single_center_point(self):
        cfg = BevConfig()
        bev = voxelize(SweepSet([np.array([[0.0, 0.0, 1.0]])]), cfg)
        assert bev.data.sum() == 1
        assert bev.data[100, 100, 0] == 1

    def test_outside_dropped(self):
        bev = voxelize(SweepSet([np.array([[70.0, 0.0, 1.0], [0.0, 0.0, 5.0]])]))
        assert bev.data.sum() == 0

    def test_sweep_channels(self):
        pts = np.array([[1.2, -3.1, 0.5]])
        bev = voxelize(SweepSet([pts, pts + [0.6, 0, 0], np.zeros((0, 3))]))
        assert bev.data[102, 93, 0] == 1 and bev.data[103, 93, 1] == 1
        assert bev.data.sum() == 2

    def test_full_scale_shape(self):
        assert BevConfig.full_scale().shape == (700, 400, 250)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            voxelize(SweepSet([np.array([[np.nan, 0.0, 1.0]])]))

    def test_indivisible(self):
        with pytest.raises(ValueError):
            BevConfig(resolution=0.3).grid

    @settings(max_examples=25)
    @given(st.integers(0, 2**31))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform([-60, -60, -0.5], [60, 60, 2.5], size=(300, 3))
        a = voxelize(SweepSet([pts])).data
        b = voxelize(SweepSet([pts[rng.permutation(300)]])).data
        np.testing.assert_array_equal(a, b)


class TestRasterizeMap:
    grid = GridSpec(-5.0, -5.0, 1.0, 10, 10)

    def test_empty(self):
        assert rasterize_map([], self.grid).data.sum() == 0

    def test_straight_lane(self):
        lane = MapElement("lane", [[-3.0, 0.5], [2.0, 0.5]])
        raster = rasterize_map([lane], self.grid)
        expected = np.zeros((10, 10), dtype=np.uint8)
        expected[2:8, 5] = 1
        np.testing.assert_array_equal(raster.data[:, :, 0], expected)
        assert raster.data[:, :, 1:].sum() == 0

    def test_polygon_fill(self):
        square = MapElement("road", [[-2, -2], [2, -2], [2, 2], [-2, 2]], closed=True)
        raster = rasterize_map([square], self.grid)
        assert raster.data[:, :, 1].sum() == 16
        assert raster.data[3:7, 3:7, 1].all()

    def test_unknown_semantic(self):
        with pytest.raises(ValueError):
            rasterize_map([MapElement("pothole", [[0, 0], [1, 1]])], self.grid)

    def test_extended_channel_count(self):
        assert len(EXTENDED_MAP_CHANNELS) == 17
        raster = rasterize_map([], self.grid, EXTENDED_MAP_CHANNELS)
        assert raster.data.shape == (10, 10, 17)


class TestRroi:
    grid = GridSpec(-10.0, -8.0, 1.0, 20, 16)

    def test_axis_aligned_crop(self):
        feats = np.random.default_rng(0).normal(size=(3, 20, 16))
        cfg = RroiConfig(length=6, width=4, front=4, back=2, resolution=1.0)
        box = OrientedBox((0.0, 0.0), 4.0, 2.0, 0.0)
        out = rroi_align(feats, self.grid, box, cfg).data
        # u in [-2, 4) -> rows 8..13; v in [-2, 2) -> cols 6..9
        np.testing.assert_array_equal(out, feats[:, 8:14, 6:10])

    def test_constant_map(self):
        feats = np.full((2, 20, 16), 1.7)
        box = OrientedBox((0.3, -0.4), 4.0, 2.0, 0.77)
        cfg = RroiConfig(length=6, width=4, front=4, back=2)
        np.testing.assert_allclose(rroi_align(feats, self.grid, box, cfg).data, 1.7, atol=1e-14)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(5)
        feats = rng.normal(size=(2, 20, 16))
        cfg = RroiConfig()
        worst = 0.0
        boxes = [OrientedBox(tuple(rng.uniform(-6, 6, 2)), 4.5, 2.0, rng.uniform(-np.pi, np.pi)) for _ in range(10)]
        batched = rroi_align(feats, self.grid, boxes, cfg).data
        for k, box in enumerate(boxes):
            worst = max(worst, np.abs(batched[k] - brute_force_rroi(feats, self.grid, box, cfg)).max())
        assert worst <= 1e-6

    @pytest.mark.parametrize("seed", range(10))
    def test_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        store = ParamStore()
        store.add("f", rng.normal(size=(2, 20, 16)))
        cfg = RroiConfig(length=6, width=4, front=4, back=2)
        boxes = [OrientedBox(tuple(rng.uniform(-5, 5, 2)), 4, 2, rng.uniform(-3, 3)) for _ in range(2)]
        w = rng.normal(size=(2, 2, 6, 4))
        report = grad_check(lambda: (rroi_align(store["f"], self.grid, boxes, cfg) * w).sum(), store, max_coords=200, rng=rng)
        assert report.max_error <= 1e-6

    def test_bad_config(self):
        with pytest.raises(ValueError):
            RroiConfig(length=10, width=4, front=4, back=2)
        with pytest.raises(ValueError):
            RroiConfig(resolution=0.0)

    def test_full_scale_config(self):
        cfg = RroiConfig.full_scale()
        assert (cfg.rows, cfg.cols) == (41, 25)


class TestFeatureIndex:
    grid = GridSpec(0.0, 0.0, 1.0, 4, 5)
    feats = np.arange(2 * 4 * 5, dtype=float).reshape(2, 4, 5)

    def test_cell_center(self):
        out = feature_index(self.feats, self.grid, OrientedBox((2.5, 1.5), 4, 2, 0.0))
        np.testing.assert_array_equal(out.data, self.feats[:, 2, 1])

    def test_heading_ignored(self):
        a = feature_index(self.feats, self.grid, OrientedBox((2.2, 3.7), 4, 2, 0.0))
        b = feature_index(self.feats, self.grid, OrientedBox((2.2, 3.7), 4, 2, 2.0))
        np.testing.assert_array_equal(a.data, b.data)

    def test_boundary_round_half_up(self):
        out = feature_index(self.feats, self.grid, OrientedBox((2.0, 3.0), 4, 2, 0.0))
        np.testing.assert_array_equal(out.data, self.feats[:, 2, 3])

    def test_outside(self):
        with pytest.raises(ValueError):
            feature_index(self.feats, self.grid, OrientedBox((-0.1, 1.0), 4, 2, 0.0))
