import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spagnn.distributions import ETA, KAPPA, MU_X, MU_Y, RHO, SIGMA_X, SIGMA_Y, se2_transform_output
from spagnn.geometry import OrientedBox
from spagnn.model import (
    VARIANTS,
    build_edges,
    forward,
    forward_batch,
    relative_poses,
    roi_inputs,
    with_variant,
)
from spagnn.nn import grad_check
from spagnn.ops import trajectory_nll
from oracles import GRID, small_config, make_store, random_boxes, move, random_rois



class TestGraph:
    def test_edges_fully_connected_within_scene(self):
        src, dst = build_edges([3, 0, 2])
        pairs = set(zip(src.tolist(), dst.tolist()))
        assert len(pairs) == 8
        assert (3, 4) in pairs and (4, 3) in pairs
        assert not any(u == v for u, v in pairs)
        assert all((u < 3) == (v < 3) for u, v in pairs)

    def test_relative_pose(self):
        boxes = [OrientedBox((1.0, 1.0), 4, 2, 0.0), OrientedBox((0.0, 0.0), 4, 2, math.pi / 2)]
        rel = relative_poses(boxes, np.array([0]), np.array([1]))
        np.testing.assert_allclose(rel, [[1.0, -1.0, -math.pi / 2]], atol=1e-12)


class TestForward:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_shapes_and_constraints(self, variant):
        cfg = small_config(variant)
        rng = np.random.default_rng(1)
        store = make_store(cfg)
        out = forward_batch(store, [random_rois(rng, 3, cfg), random_rois(rng, 2, cfg)], [random_boxes(rng, 3), random_boxes(rng, 2)], cfg)
        assert out.local.shape == (5, 7, 7)
        assert list(out.scene_index) == [0, 0, 0, 1, 1]
        assert len(out.steps) == (1 if variant == "mlp" else 4)
        for o in out.steps:
            p = o.data
            assert np.all(p[..., SIGMA_X] > 0) and np.all(p[..., SIGMA_Y] > 0)
            assert np.all(np.abs(p[..., RHO]) < 1)
            assert np.all(p[..., KAPPA] >= 0)
            assert np.all(np.abs(p[..., ETA]) <= math.pi)

    def test_zero_weights_give_default_state(self):
        cfg = small_config("mlp")
        store = make_store(cfg)
        for name in store:
            store[name].data[...] = 0.0
        rng = np.random.default_rng(2)
        out = forward_batch(store, [random_rois(rng, 2, cfg)], [random_boxes(rng, 2)], cfg)
        p = out.local.data
        np.testing.assert_array_equal(p[..., [MU_X, MU_Y, RHO, ETA]], 0.0)
        np.testing.assert_allclose(p[..., SIGMA_X], math.log(2) + 1e-4)
        np.testing.assert_allclose(p[..., KAPPA], math.log(2))

    def test_no_actors(self):
        cfg = small_config()
        out = forward_batch(make_store(cfg), [None], [[]], cfg)
        assert out.local.shape == (0, 7, 7)
        assert out.world().shape == (0, 7, 7)

    def test_single_actor_receives_no_messages(self):
        cfg = small_config()
        rng = np.random.default_rng(3)
        store = make_store(cfg)
        rois, boxes = [random_rois(rng, 1, cfg)], [random_boxes(rng, 1)]
        out = forward_batch(store, rois, boxes, cfg)
        # the GRU sees an empty max (zeros), so the state evolves but stays finite
        assert np.all(np.isfinite(out.local.data))
        assert out.local.shape == (1, 7, 7)

    def test_zero_steps_equal_mlp(self):
        cfg = small_config("full", n_steps=0)
        rng = np.random.default_rng(4)
        store = make_store(cfg)
        rois, boxes = [random_rois(rng, 4, cfg)], [random_boxes(rng, 4)]
        a = forward_batch(store, rois, boxes, cfg).local.data
        b = forward_batch(store, rois, boxes, with_variant(cfg, "mlp")).local.data
        np.testing.assert_array_equal(a, b)

    def test_scenes_do_not_interact(self):
        cfg = small_config()
        rng = np.random.default_rng(5)
        store = make_store(cfg)
        r1, b1 = random_rois(rng, 3, cfg), random_boxes(rng, 3)
        r2, b2 = random_rois(rng, 2, cfg), random_boxes(rng, 2)
        alone = forward_batch(store, [r1], [b1], cfg).local.data
        both = forward_batch(store, [r1, r2], [b1, b2], cfg).local.data
        np.testing.assert_allclose(both[:3], alone, atol=1e-12)

    def test_deterministic_init(self):
        a, b = make_store(small_config(), seed=7), make_store(small_config(), seed=7)
        for name in a:
            np.testing.assert_array_equal(a[name].data, b[name].data)

    def test_world_embeds_through_box_pose(self):
        cfg = small_config()
        rng = np.random.default_rng(6)
        boxes = random_boxes(rng, 2)
        out = forward_batch(make_store(cfg), [random_rois(rng, 2, cfg)], [boxes], cfg)
        w = out.world()
        expected = se2_transform_output(out.local.data[1], boxes[1].heading, boxes[1].center)
        np.testing.assert_allclose(w[1], expected, atol=1e-12)

    def test_index_mode(self):
        cfg = small_config(roi_mode="index")
        store = make_store(cfg)
        feats = np.random.default_rng(0).random((3, 20, 20))
        out = forward(store, feats, GRID, random_boxes(np.random.default_rng(1), 3), cfg)
        assert out.local.shape == (3, 7, 7)

    def test_roi_inputs_append_coordinates(self):
        cfg = small_config()
        feats = np.zeros((3, 20, 20))
        r = roi_inputs(feats, GRID, [OrientedBox((0, 0), 4, 2, 0)], cfg).data
        assert r.shape == (1, 5, 8, 4)
        assert np.all(r[0, :3] == 0)
        assert r[0, 3, 0, 0] < 0 < r[0, 3, -1, 0]
        assert r[0, 4, 0, 0] < 0 < r[0, 4, 0, -1]


class TestEquivariance:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(VARIANTS))
    def test_permutation(self, seed, variant):
        cfg = small_config(variant)
        rng = np.random.default_rng(seed)
        store = make_store(cfg, seed=seed % 97)
        n = 5
        rois, boxes = random_rois(rng, n, cfg), random_boxes(rng, n)
        perm = rng.permutation(n)
        a = forward_batch(store, [rois], [boxes], cfg).local.data
        b = forward_batch(store, [rois[perm]], [[boxes[i] for i in perm]], cfg).local.data
        np.testing.assert_allclose(b, a[perm], rtol=0, atol=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50))
    def test_rigid_full_variant(self, seed, phi, tx, ty):
        cfg = small_config("full")
        rng = np.random.default_rng(seed)
        store = make_store(cfg)
        rois, boxes = random_rois(rng, 4, cfg), random_boxes(rng, 4)
        moved = [move(b, phi, (tx, ty)) for b in boxes]
        a = forward_batch(store, [rois], [boxes], cfg)
        b = forward_batch(store, [rois], [moved], cfg)
        np.testing.assert_allclose(b.local.data, a.local.data, atol=1e-6)
        np.testing.assert_allclose(b.world(), se2_transform_output(a.world(), phi, (tx, ty)), atol=1e-6)

    def test_rigid_through_crop(self):
        # a quarter turn of the feature map and boxes about the grid center
        cfg = small_config("full")
        rng = np.random.default_rng(11)
        store = make_store(cfg)
        feats = rng.random((3, 20, 20))
        turned = np.zeros_like(feats)
        for i in range(20):
            for j in range(20):
                turned[:, 19 - j, i] = feats[:, i, j]
        boxes = random_boxes(rng, 3, spread=3.0)
        moved = [move(b, math.pi / 2, (0.0, 0.0)) for b in boxes]
        a = forward(store, feats, GRID, boxes, cfg).local.data
        b = forward(store, turned, GRID, moved, cfg).local.data
        np.testing.assert_allclose(b, a, atol=1e-6)

    def test_global_box_variant_breaks_rigid_invariance(self):
        cfg = small_config("gnn_global_box")
        rng = np.random.default_rng(12)
        store = make_store(cfg)
        rois, boxes = random_rois(rng, 4, cfg), random_boxes(rng, 4)
        moved = [move(b, 0.7, (5.0, -3.0)) for b in boxes]
        a = forward_batch(store, [rois], [boxes], cfg).local.data
        b = forward_batch(store, [rois], [moved], cfg).local.data
        assert np.max(np.abs(a - b)) > 1e-4


class TestGradients:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_gradcheck(self, variant):
        cfg = small_config(variant)
        rng = np.random.default_rng(13)
        store = make_store(cfg)
        feats = rng.random((3, 20, 20))
        boxes = random_boxes(rng, 2, spread=3.0)
        targets = rng.normal(0, 1, size=(2, 7, 3))

        def loss():
            return trajectory_nll(forward(store, feats, GRID, boxes, cfg).local, targets)

        assert grad_check(loss, store, max_coords=15, rng=rng).max_error <= 1e-5

    def test_every_group_receives_gradient(self):
        cfg = small_config("full")
        rng = np.random.default_rng(14)
        store = make_store(cfg)
        feats = rng.random((3, 20, 20))
        boxes = random_boxes(rng, 3, spread=3.0)
        loss = trajectory_nll(forward(store, feats, GRID, boxes, cfg).local, rng.normal(size=(3, 7, 3)))
        loss.backward()
        for name, g in store.grads().items():
            assert np.any(g != 0), name
