import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spagnn.evaluation import (
    REPORT_COLUMNS,
    MetricsReport,
    average_precision,
    collision_rate,
    displacement_metrics,
    evaluate_detections,
    match_and_pr,
    match_detections,
    operating_point,
    precision_recall,
    read_report_csv,
    write_report_csv,
)
from spagnn.geometry import OrientedBox
from oracles import TIMES, raster_collision_oracle, random_trajectory_set



def box(x, y, heading=0.0, length=4.0, width=2.0):
    return OrientedBox((x, y), length, width, heading)


class TestMatching:
    def test_perfect_detections_give_ap_one(self):
        labels = [box(0, 0), box(10, 0), box(0, 10)]
        _, p, r, ap = match_and_pr([0.9, 0.8, 0.7], labels, labels)
        assert ap == 1.0
        np.testing.assert_allclose(r, [1 / 3, 2 / 3, 1.0])

    def test_no_detections_give_ap_zero(self):
        _, p, r, ap = match_and_pr([], [], [box(0, 0)])
        assert ap == 0.0

    def test_one_of_two_labels(self):
        labels = [box(0, 0), box(10, 0)]
        m, p, r, ap = match_and_pr([0.9], [box(0, 0)], labels)
        assert (p[0], r[0]) == (1.0, 0.5)
        assert ap == pytest.approx(0.5)
        assert list(m.label_matched) == [True, False]

    def test_duplicate_detection_is_false_positive(self):
        labels = [box(0, 0)]
        m, p, r, ap = match_and_pr([0.9, 0.8], [box(0, 0), box(0.1, 0)], labels)
        assert list(m.detection_label) == [0, -1]
        np.testing.assert_allclose(p, [1.0, 0.5])
        assert ap == 1.0

    def test_highest_score_claims_label(self):
        labels = [box(0, 0)]
        m = match_detections([0.2, 0.9], [box(0, 0), box(0.3, 0)], labels)
        assert list(m.detection_label) == [-1, 0]

    def test_prefers_highest_iou_label(self):
        labels = [box(0, 0), box(1.0, 0)]
        m = match_detections([0.9], [box(0.9, 0)], labels)
        assert list(m.detection_label) == [1]

    def test_below_threshold_unmatched(self):
        m = match_detections([0.9], [box(3.0, 0)], [box(0, 0)], iou_threshold=0.5)
        assert list(m.detection_label) == [-1]

    def test_ap_hand_computed_envelope(self):
        # TP, FP, TP over 2 labels: precision 1, 1/2, 2/3; envelope 1, 2/3, 2/3
        p, r = precision_recall([0.9, 0.8, 0.7], [True, False, True], 2)
        assert average_precision(p, r) == pytest.approx(0.5 * 1 + 0.5 * 2 / 3)

    def test_pooled_over_scenes(self):
        scenes = [([0.9], [box(0, 0)], [box(0, 0)]), ([0.8], [box(50, 0)], [box(0, 0)])]
        _, p, r, ap = evaluate_detections(scenes)
        np.testing.assert_allclose(r, [0.5, 0.5])
        assert ap == pytest.approx(0.5)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_removing_correct_detection_never_raises_ap(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        labels = [box(12.0 * k, 0.0) for k in range(n)]
        dets = [box(12.0 * k + rng.normal(0, 0.2), rng.normal(0, 0.2)) for k in range(n)]
        dets += [box(rng.uniform(-100, -20), rng.uniform(-50, 50)) for _ in range(int(rng.integers(0, 4)))]
        scores = list(rng.uniform(0, 1, size=len(dets)))
        m, _, _, ap = match_and_pr(scores, dets, labels)
        tp = np.nonzero(m.true_positive)[0]
        if len(tp) == 0:
            return
        drop = int(rng.choice(tp))
        keep = [i for i in range(len(dets)) if i != drop]
        _, _, _, ap2 = match_and_pr([scores[i] for i in keep], [dets[i] for i in keep], labels)
        assert ap2 <= ap + 1e-12


class TestOperatingPoint:
    def test_highest_threshold_reaching_recall(self):
        assert operating_point([0.9, 0.8, 0.7, 0.6], [True, False, True, True], 4, 0.5) == 0.7

    def test_unreachable_recall_names_maximum(self):
        with pytest.raises(ValueError, match="maximum achievable recall is 0.5000"):
            operating_point([0.9], [True], 2, 0.8)


class TestDisplacement:
    def setup_method(self):
        self.future = np.zeros((1, 7, 3))
        self.future[0, :, 0] = TIMES * 5.0

    def metrics(self, xy, heading, future=None):
        future = self.future if future is None else future
        return displacement_metrics([1.0], [True], 1, xy, heading, future, TIMES, recall=1.0)

    def test_exact_prediction(self):
        out = self.metrics(self.future[:, :, :2], self.future[:, :, 2])
        assert out == {0.0: (0.0, 0.0), 1.0: (0.0, 0.0), 3.0: (0.0, 0.0)}

    def test_wrap_around_heading(self):
        fut = self.future.copy()
        fut[0, :, 2] = math.radians(-179)
        out = self.metrics(fut[:, :, :2], np.full((1, 7), math.radians(179)), fut)
        assert out[1.0][1] == pytest.approx(2.0)

    def test_three_four_five(self):
        xy = self.future[:, :, :2].copy()
        xy[0, 2] += [0.3, 0.4]
        out = self.metrics(xy, self.future[:, :, 2])
        assert out[1.0][0] == pytest.approx(50.0)
        assert out[0.0][0] == 0.0 and out[3.0][0] == 0.0

    def test_false_positives_ignored(self):
        xy = np.concatenate([self.future[:, :, :2], np.full((1, 7, 2), 99.0)])
        fut = np.concatenate([self.future, np.zeros((1, 7, 3))])
        out = displacement_metrics([0.9, 0.95], [True, False], 1, xy, np.zeros((2, 7)), fut, TIMES, recall=1.0)
        assert out[3.0][0] == 0.0

    def test_off_grid_horizon(self):
        with pytest.raises(ValueError, match="not on the forecast grid"):
            displacement_metrics([1.0], [True], 1, self.future[:, :, :2], self.future[:, :, 2], self.future, TIMES, horizons=(0.7,), recall=1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-math.pi, math.pi), st.floats(-100, 100), st.floats(-100, 100), st.integers(0, 2**31 - 1))
    def test_rigid_invariance(self, phi, tx, ty, seed):
        rng = np.random.default_rng(seed)
        n = 5
        fut = rng.normal(0, 10, size=(n, 7, 3))
        xy = fut[:, :, :2] + rng.normal(0, 1, size=(n, 7, 2))
        head = fut[:, :, 2] + rng.normal(0, 0.3, size=(n, 7))
        scores = rng.uniform(size=n)
        tp = [True, True, False, True, True]
        base = displacement_metrics(scores, tp, 5, xy, head, fut, TIMES, recall=0.6)
        c, s = math.cos(phi), math.sin(phi)
        R = np.array([[c, -s], [s, c]])
        fut2 = fut.copy()
        fut2[:, :, :2] = fut[:, :, :2] @ R.T + [tx, ty]
        fut2[:, :, 2] += phi
        moved = displacement_metrics(scores, tp, 5, xy @ R.T + [tx, ty], head + phi, fut2, TIMES, recall=0.6)
        for hz in base:
            np.testing.assert_allclose(moved[hz], base[hz], atol=1e-9)


class TestCollisionRate:
    def test_disjoint(self):
        poses = np.zeros((3, 7, 3))
        poses[:, :, 0] = np.array([0.0, 10.0, 20.0])[:, None]
        out = collision_rate(poses, np.array([[4, 2]] * 3), TIMES)
        assert out == {(0.0, 1.0): 0.0, (0.0, 3.0): 0.0}

    def test_two_of_four_at_one_second(self):
        poses = np.zeros((4, 7, 3))
        poses[:, :, 0] = np.array([0.0, 10.0, 30.0, 60.0])[:, None]
        poses[1, 2, 0] = 1.0  # t = 1 s
        out = collision_rate(poses, np.array([[4, 2]] * 4), TIMES)
        assert out[(0.0, 1.0)] == 500.0
        assert out[(0.0, 3.0)] == 500.0

    def test_late_collision_outside_short_window(self):
        poses = np.zeros((2, 7, 3))
        poses[1, :, 0] = 10.0
        poses[1, 4, 0] = 1.0  # t = 2 s
        out = collision_rate(poses, np.array([[4, 2]] * 2), TIMES)
        assert out == {(0.0, 1.0): 0.0, (0.0, 3.0): 1000.0}

    def test_same_place_different_times(self):
        poses = np.zeros((2, 7, 3))
        poses[0, :, 0] = TIMES * 10.0
        poses[1, :, 0] = TIMES * 10.0 - 15.0
        out = collision_rate(poses, np.array([[4, 2]] * 2), TIMES)
        assert out[(0.0, 3.0)] == 0.0

    def test_touching_edges_do_not_collide(self):
        poses = np.zeros((2, 7, 3))
        poses[1, :, 0] = 4.0
        assert collision_rate(poses, np.array([[4, 2]] * 2), TIMES)[(0.0, 3.0)] == 0.0

    def test_other_scene_ignored(self):
        poses = np.zeros((2, 7, 3))
        out = collision_rate(poses, np.array([[4, 2]] * 2), TIMES, scene_index=[0, 1])
        assert out[(0.0, 3.0)] == 0.0

    def test_grid_mismatch(self):
        with pytest.raises(ValueError, match="grid"):
            collision_rate(np.zeros((2, 5, 3)), np.ones((2, 2)), TIMES)

    def test_empty(self):
        assert collision_rate(np.zeros((0, 7, 3)), np.zeros((0, 2)), TIMES)[(0.0, 3.0)] == 0.0

    def test_matches_raster_oracle(self):
        rng = np.random.default_rng(2024)
        windows = ((0.0, 1.0), (0.0, 3.0))
        checked, colliding = 0, 0
        while checked < 50:
            poses, dims = random_trajectory_set(rng)
            # sets with contact within 0.1 m are grazing and skipped
            shrunk = raster_collision_oracle(poses, dims, TIMES, windows, margin=-0.1)
            grown = raster_collision_oracle(poses, dims, TIMES, windows, margin=0.1)
            if shrunk != grown:
                continue
            checked += 1
            got = collision_rate(poses, dims, TIMES, windows)
            assert got == raster_collision_oracle(poses, dims, TIMES, windows)
            colliding += got[(0.0, 3.0)] > 0
        assert 5 < colliding < 45


class TestReportCsv:
    def test_round_trip(self, tmp_path):
        rep = MetricsReport("full", 0.9, 0.8, {0.0: (10.0, 1.0), 3.0: (100.0, 5.0)}, {(0.0, 1.0): 1.5, (0.0, 3.0): 2.5}, 12.5)
        path = tmp_path / "r.csv"
        write_report_csv(path, [rep])
        assert path.read_text().splitlines()[0] == ",".join(REPORT_COLUMNS)
        rows = read_report_csv(path)
        assert len(rows) == 2
        assert rows[1]["l2_cm"] == 100.0 and rows[1]["collision_0_3s_permille"] == 2.5 and rows[0]["variant"] == "full"
