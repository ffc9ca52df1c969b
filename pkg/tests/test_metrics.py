"""Metric identities, degenerate denominators, and the CSV report shape."""

import csv

import numpy as np
import numpy.testing as npt
import pytest

from polypseg.errors import ConfigError, DimensionError, ValidationError
from polypseg.metrics import (
    ConfusionCounts,
    accuracy,
    binarize,
    compute_metrics,
    confusion_counts,
    dice_coefficient,
    macro_average,
    mean_iou,
    precision,
    recall,
    write_metrics_csv,
    xor_error_map,
)


def random_pair(rng, shape=(16, 16)):
    pred = (rng.uniform(size=shape) > rng.uniform(0.2, 0.8)).astype(np.uint8)
    gt = (rng.uniform(size=shape) > rng.uniform(0.2, 0.8)).astype(np.uint8)
    return pred, gt


class TestBinarize:
    def test_threshold_is_inclusive(self):
        probs = np.array([0.49, 0.5, 0.51])
        npt.assert_array_equal(binarize(probs), [0, 1, 1])

    def test_custom_threshold(self):
        npt.assert_array_equal(binarize(np.array([0.2, 0.8]), threshold=0.9), [0, 0])

    def test_threshold_validated(self):
        with pytest.raises(ConfigError):
            binarize(np.array([0.5]), threshold=1.0)


class TestCounts:
    def test_counts_partition_the_pixels(self):
        rng = np.random.default_rng(0)
        pred, gt = random_pair(rng)
        c = confusion_counts(pred, gt)
        assert c.total == pred.size
        assert c.tp == int(np.sum((pred == 1) & (gt == 1)))
        assert c.fn == int(np.sum((pred == 0) & (gt == 1)))

    def test_non_binary_rejected(self):
        with pytest.raises(ValidationError):
            confusion_counts(np.array([0, 2]), np.array([0, 1]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            confusion_counts(np.zeros((2, 2)), np.zeros((2, 3)))


class TestIdentities:
    def test_identities_over_random_pairs(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            pred, gt = random_pair(rng, shape=(8, 8))
            c = confusion_counts(pred, gt)
            d, j = dice_coefficient(c), mean_iou(c)
            assert abs(d - 2 * j / (1 + j)) <= 1e-12
            p, r = precision(c), recall(c)
            if c.tp > 0:
                assert abs(d - 2 * p * r / (p + r)) <= 1e-12
            assert accuracy(c) == (c.tp + c.tn) / c.total
            assert int(xor_error_map(pred, gt).sum()) == c.fp + c.fn

    def test_perfect_and_disjoint(self):
        gt = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        perfect = compute_metrics(confusion_counts(gt, gt))
        assert (perfect.dice, perfect.miou, perfect.accuracy) == (1.0, 1.0, 1.0)
        disjoint = compute_metrics(confusion_counts(1 - gt, gt))
        assert (disjoint.dice, disjoint.miou, disjoint.accuracy) == (0.0, 0.0, 0.0)


class TestDegenerateDenominators:
    def test_both_empty_is_perfect(self):
        c = confusion_counts(np.zeros((4, 4), np.uint8), np.zeros((4, 4), np.uint8))
        m = compute_metrics(c)
        assert (m.dice, m.miou, m.precision, m.recall, m.accuracy) == (1.0, 1.0, 1.0, 1.0, 1.0)

    def test_empty_prediction_nonempty_gt(self):
        gt = np.ones((4, 4), np.uint8)
        c = confusion_counts(np.zeros((4, 4), np.uint8), gt)
        m = compute_metrics(c)
        # precision's denominator is zero but fn > 0, so it must be 0.0
        assert m.precision == 0.0
        assert m.recall == 0.0
        assert m.dice == 0.0

    def test_empty_gt_nonempty_prediction(self):
        c = confusion_counts(np.ones((4, 4), np.uint8), np.zeros((4, 4), np.uint8))
        assert recall(c) == 0.0
        assert dice_coefficient(c) == 0.0


class TestReports:
    def test_macro_average_is_plain_mean(self):
        rng = np.random.default_rng(2)
        reports = []
        for _ in range(5):
            pred, gt = random_pair(rng)
            reports.append(compute_metrics(confusion_counts(pred, gt)))
        macro = macro_average(reports)
        npt.assert_allclose(macro.dice, np.mean([r.dice for r in reports]), rtol=1e-15)
        with pytest.raises(ConfigError):
            macro_average([])

    def test_csv_layout(self, tmp_path):
        rng = np.random.default_rng(3)
        rows = []
        for i in range(3):
            pred, gt = random_pair(rng)
            c = confusion_counts(pred, gt)
            rows.append((f"img_{i:03d}", compute_metrics(c), c))
        macro = macro_average([r[1] for r in rows])
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, rows, macro)
        with open(path, newline="") as fh:
            parsed = list(csv.reader(fh))
        assert parsed[0] == ["image_id", "dice", "miou", "precision", "recall",
                             "accuracy", "tp", "fp", "tn", "fn"]
        assert len(parsed) == 5
        assert parsed[-1][0] == "MACRO"
        c0 = rows[0][2]
        assert parsed[1][6:] == [str(c0.tp), str(c0.fp), str(c0.tn), str(c0.fn)]

    def test_xor_map_is_binary(self):
        rng = np.random.default_rng(4)
        pred, gt = random_pair(rng)
        xmap = xor_error_map(pred, gt)
        assert set(np.unique(xmap)) <= {0, 1}


class TestCountsDataclass:
    def test_accuracy_of_empty_rejected(self):
        with pytest.raises(DimensionError):
            accuracy(ConfusionCounts(0, 0, 0, 0))
