import math

import numpy as np
import pytest

from grainseg.metrics import (CLAMP_EPS, METRIC_NAMES, ClassWeights,
                              ConfusionCounts, MetricsReport, aggregate_report,
                              compute_class_weights, confusion_counts,
                              segmentation_metrics, weighted_bce)
from grainseg.tensor import Tensor
from oracles import (fd_gradient, naive_aggregate, naive_confusion,
                     naive_metrics, rel_error)


class TestClassWeights:
    def test_balanced_mask_both_modes(self):
        mask = np.array([[1, 0], [0, 1]], np.uint8)
        for mode in ("as_written", "inverse_frequency"):
            cw = compute_class_weights([mask], mode)
            assert cw.w0 == pytest.approx(0.5) and cw.w1 == pytest.approx(0.5)

    def test_quarter_grain_as_written(self):
        mask = np.zeros((4, 4), np.uint8)
        mask[0, :] = 1  # 4 of 16 grain pixels
        cw = compute_class_weights([mask], "as_written")
        assert cw.w1 == pytest.approx(0.25) and cw.w0 == pytest.approx(0.75)

    def test_quarter_grain_inverse_frequency(self):
        mask = np.zeros((4, 4), np.uint8)
        mask[0, :] = 1
        cw = compute_class_weights([mask], "inverse_frequency")
        assert cw.w1 == pytest.approx(0.75) and cw.w0 == pytest.approx(0.25)

    def test_pooled_over_collection(self):
        a = np.ones((2, 2), np.uint8)
        b = np.zeros((2, 2), np.uint8)
        cw = compute_class_weights([a, b, b, b], "as_written")
        assert cw.w1 == pytest.approx(0.25)

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(0)
        masks = [(rng.random((8, 8)) > 0.7).astype(np.uint8) for _ in range(3)]
        cw = compute_class_weights(masks)
        assert cw.w0 + cw.w1 == pytest.approx(1.0)
        assert cw.w0 > 0 and cw.w1 > 0

    def test_errors(self):
        with pytest.raises(ValueError):
            compute_class_weights([])
        with pytest.raises(ValueError):
            compute_class_weights([np.ones((4, 4), np.uint8)])
        with pytest.raises(ValueError):
            compute_class_weights([np.zeros((4, 4), np.uint8)])
        with pytest.raises(ValueError):
            compute_class_weights([np.eye(2, dtype=np.uint8)], mode="bogus")


class TestWeightedBce:
    def test_perfect_prediction_tiny_loss(self):
        t = np.array([[1.0, 0.0], [0.0, 1.0]], np.float32)
        loss = weighted_bce(Tensor(t.copy()), t, ClassWeights(0.5, 0.5))
        assert loss.data.item() <= 2e-6

    def test_all_half_predictions_give_ln2(self):
        p = Tensor(np.full((1, 1, 4, 4), 0.5, np.float32))
        t = np.ones((1, 1, 4, 4), np.float32)
        loss = weighted_bce(p, t, ClassWeights(w0=0.0, w1=1.0))
        assert loss.data.item() == pytest.approx(math.log(2.0), abs=1e-6)

    def test_two_pixel_hand_value(self):
        p = Tensor(np.array([0.8, 0.3], np.float32))
        t = np.array([1.0, 0.0], np.float32)
        loss = weighted_bce(p, t, ClassWeights(0.5, 0.5))
        expected = (-0.5 * math.log(0.8) - 0.5 * math.log(0.7)) / 2.0
        assert loss.data.item() == pytest.approx(expected, abs=1e-4)

    def test_half_weights_are_half_of_unweighted(self):
        rng = np.random.default_rng(1)
        p = rng.uniform(0.05, 0.95, (2, 1, 6, 6)).astype(np.float32)
        t = (rng.random((2, 1, 6, 6)) > 0.5).astype(np.float32)
        half = weighted_bce(Tensor(p.copy()), t, ClassWeights(0.5, 0.5)).data.item()
        unweighted = weighted_bce(Tensor(p.copy()), t, ClassWeights(1.0, 1.0)).data.item()
        assert half == pytest.approx(0.5 * unweighted, rel=1e-6)

    def test_strictly_positive_unless_perfect(self):
        p = Tensor(np.array([0.99, 0.01], np.float32))
        t = np.array([1.0, 0.0], np.float32)
        assert weighted_bce(p, t, ClassWeights(0.5, 0.5)).data.item() > 2e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            weighted_bce(Tensor(np.full((2, 2), 0.5, np.float32)),
                         np.zeros((2, 3), np.float32), ClassWeights(0.5, 0.5))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        p64 = rng.uniform(0.05, 0.95, (2, 1, 4, 4))
        t = (rng.random((2, 1, 4, 4)) > 0.6).astype(np.float64)
        w = ClassWeights(w0=0.3, w1=0.7)

        pred = Tensor(p64.astype(np.float32), requires_grad=True)
        weighted_bce(pred, t.astype(np.float32), w).backward()

        def f():
            pc = np.clip(p64, CLAMP_EPS, 1.0 - CLAMP_EPS)
            per = -w.w1 * t * np.log(pc) - w.w0 * (1.0 - t) * np.log(1.0 - pc)
            return per.mean()

        fd = fd_gradient(f, p64, h=1e-5)
        assert rel_error(pred.grad, fd) < 1e-3

    def test_clamped_pixels_get_zero_gradient(self):
        pred = Tensor(np.array([0.0, 1.0, 0.5], np.float32), requires_grad=True)
        t = np.array([1.0, 0.0, 1.0], np.float32)
        loss = weighted_bce(pred, t, ClassWeights(0.5, 0.5))
        assert np.isfinite(loss.data.item())
        loss.backward()
        assert pred.grad[0] == 0.0 and pred.grad[1] == 0.0 and pred.grad[2] != 0.0


class TestConfusion:
    def test_perfect(self):
        gt = np.zeros((4, 4), np.uint8)
        gt[:2, :2] = 1
        gt[2, :] = 1
        gt[3, :2] = 1  # 10 grain, 6 background
        c = confusion_counts(gt, gt)
        assert (c.tp, c.fp, c.fn, c.tn) == (10, 0, 0, 6)

    def test_hand_case(self):
        gt = np.array([[1, 1], [0, 0]], np.uint8)
        pred = np.array([[1, 0], [0, 0]], np.uint8)
        c = confusion_counts(pred, gt)
        assert (c.tp, c.fp, c.fn, c.tn) == (1, 0, 1, 2)

    def test_all_missed(self):
        gt = np.ones((3, 5), np.uint8)
        c = confusion_counts(np.zeros_like(gt), gt)
        assert (c.tp, c.fp, c.fn, c.tn) == (0, 0, 15, 0)

    def test_matches_pixel_loop_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            pred = (rng.random((9, 7)) > rng.random()).astype(np.uint8)
            gt = (rng.random((9, 7)) > rng.random()).astype(np.uint8)
            c = confusion_counts(pred, gt)
            assert (c.tp, c.fp, c.fn, c.tn) == naive_confusion(pred, gt)

    def test_inversion_symmetry(self):
        rng = np.random.default_rng(4)
        pred = (rng.random((8, 8)) > 0.5).astype(np.uint8)
        gt = (rng.random((8, 8)) > 0.5).astype(np.uint8)
        c = confusion_counts(pred, gt)
        ci = confusion_counts(1 - pred, 1 - gt)
        assert (ci.tp, ci.fp, ci.fn, ci.tn) == (c.tn, c.fn, c.fp, c.tp)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            confusion_counts(np.zeros((2, 2)), np.zeros((2, 3)))


class TestSegMetrics:
    def test_perfect(self):
        m = segmentation_metrics(ConfusionCounts(tp=5, fp=0, fn=0, tn=3))
        assert all(m[k] == 1.0 for k in METRIC_NAMES)

    def test_hand_case(self):
        m = segmentation_metrics(ConfusionCounts(tp=1, fp=0, fn=1, tn=2))
        assert m["precision"] == pytest.approx(1.0)
        assert m["recall"] == pytest.approx(0.5)
        assert m["f1"] == pytest.approx(2.0 / 3.0, abs=1e-4)
        assert m["accuracy"] == pytest.approx(0.75)
        assert m["jaccard"] == pytest.approx(0.5)

    def test_both_empty_convention(self):
        m = segmentation_metrics(ConfusionCounts(tp=0, fp=0, fn=0, tn=9))
        assert all(m[k] == 1.0 for k in METRIC_NAMES)

    def test_empty_prediction_nonempty_truth(self):
        m = segmentation_metrics(ConfusionCounts(tp=0, fp=0, fn=4, tn=4))
        assert m["precision"] == 0.0 and m["recall"] == 0.0
        assert m["f1"] == 0.0 and m["jaccard"] == 0.0
        assert m["accuracy"] == 0.5

    def test_no_pixels_is_error(self):
        with pytest.raises(ValueError):
            segmentation_metrics(ConfusionCounts(0, 0, 0, 0))

    def test_matches_oracle_random_counts(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            tp, fp, fn, tn = (int(v) for v in rng.integers(0, 20, 4))
            if tp + fp + fn + tn == 0:
                continue
            m = segmentation_metrics(ConfusionCounts(tp, fp, fn, tn))
            ref = naive_metrics(tp, fp, fn, tn)
            for k in METRIC_NAMES:
                assert m[k] == pytest.approx(ref[k], abs=1e-12), (k, tp, fp, fn, tn)

    def test_jaccard_never_exceeds_f1(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            tp, fp, fn, tn = (int(v) for v in rng.integers(0, 50, 4))
            if tp + fp + fn + tn == 0:
                continue
            m = segmentation_metrics(ConfusionCounts(tp, fp, fn, tn))
            assert 0.0 <= m["jaccard"] <= m["f1"] <= 1.0


class TestAggregate:
    def test_single_row(self):
        row = {k: 0.5 for k in METRIC_NAMES}
        rep = aggregate_report([("img0", row)])
        for k in METRIC_NAMES:
            agg = rep.aggregate[k]
            assert agg["min"] == agg["max"] == agg["avg"] == 0.5
            assert agg["std"] == 0.0

    def test_two_point_arithmetic(self):
        rows = [("a", {k: 0.8 for k in METRIC_NAMES}),
                ("b", {k: 0.9 for k in METRIC_NAMES})]
        agg = aggregate_report(rows).aggregate["accuracy"]
        assert agg["avg"] == pytest.approx(0.85)
        assert agg["std"] == pytest.approx(0.05)

    def test_matches_aggregation_oracle(self):
        rng = np.random.default_rng(7)
        rows = [(f"img{i}", {k: float(rng.random()) for k in METRIC_NAMES})
                for i in range(4)]
        rep = aggregate_report(rows)
        for k in METRIC_NAMES:
            ref = naive_aggregate([row[k] for _, row in rows])
            for stat in ("min", "max", "avg", "std"):
                assert rep.aggregate[k][stat] == pytest.approx(ref[stat], abs=1e-9)

    def test_min_avg_max_ordering(self):
        rng = np.random.default_rng(8)
        rows = [(str(i), {k: float(rng.random()) for k in METRIC_NAMES})
                for i in range(10)]
        rep = aggregate_report(rows)
        for k in METRIC_NAMES:
            agg = rep.aggregate[k]
            assert agg["min"] <= agg["avg"] <= agg["max"]
            assert agg["std"] >= 0.0

    def test_empty_is_error(self):
        with pytest.raises(ValueError):
            aggregate_report([])

    def test_json_round_trip(self):
        rows = [("img0", {k: 0.25 * (i + 1) / 5 for i, k in enumerate(METRIC_NAMES)}),
                ("img1", {k: 1.0 for k in METRIC_NAMES})]
        rep = aggregate_report(rows)
        back = MetricsReport.from_json(rep.to_json())
        assert back.per_image == rep.per_image
        assert back.aggregate == rep.aggregate
