"""
Clustering metric tests
"""
import itertools
import json

import numpy as np
import pytest

from evaluation import MetricReport, clustering_accuracy, contingency_table, evaluate, hungarian, nmi
from exceptions import InvalidInputError, ShapeMismatchError


def _relabel(labels, rng):
    """Apply a random bijection onto fresh, non-contiguous label ids."""
    ids = np.unique(labels)
    targets = rng.permutation(ids.size) * 3 + 7
    return targets[np.searchsorted(ids, labels)]


def _brute_force_acc(true, pred):
    true_ids, pred_ids = np.unique(true), np.unique(pred)
    best = 0
    size = max(true_ids.size, pred_ids.size)
    targets = list(true_ids) + [None] * (size - true_ids.size)
    for perm in itertools.permutations(targets, size):
        mapping = dict(zip(pred_ids, perm))
        best = max(best, sum(mapping[p] == t for t, p in zip(true, pred)))
    return best / len(true)


class TestAccuracy:
    def test_hand_example(self):
        assert clustering_accuracy([0, 0, 1, 1], [0, 1, 1, 1]) == 0.75

    def test_relabelled_partition(self):
        assert clustering_accuracy([0, 0, 1, 1, 2], [2, 2, 0, 0, 1]) == 1.0

    def test_more_predicted_clusters(self):
        assert clustering_accuracy([0, 0, 0, 0], [0, 1, 2, 3]) == 0.25

    def test_non_contiguous_ids(self):
        assert clustering_accuracy([5, 5, 9], [-1, -1, 7]) == 1.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 20))
            true = rng.integers(0, int(rng.integers(1, 5)), size=n)
            pred = rng.integers(0, int(rng.integers(1, 5)), size=n)
            assert clustering_accuracy(true, pred) == pytest.approx(_brute_force_acc(true, pred))

    def test_permutation_of_samples(self):
        rng = np.random.default_rng(1)
        true = rng.integers(0, 4, size=50)
        pred = rng.integers(0, 4, size=50)
        order = rng.permutation(50)
        assert clustering_accuracy(true[order], pred[order]) == clustering_accuracy(true, pred)

    def test_at_least_one_over_cluster_count(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = int(rng.integers(1, 60))
            true = rng.integers(0, int(rng.integers(1, 7)), size=n)
            pred = rng.integers(0, int(rng.integers(1, 7)), size=n)
            k = max(np.unique(true).size, np.unique(pred).size)
            assert clustering_accuracy(true, pred) >= 1.0 / k
            if np.unique(pred).size >= np.unique(true).size:
                assert clustering_accuracy(true, pred) >= 1.0 / np.unique(pred).size

    def test_constant_prediction_scores_majority_share(self):
        true = np.array([0, 0, 0, 1, 1, 2, 2, 2, 2, 3])
        assert clustering_accuracy(true, np.zeros_like(true)) == 0.4

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            clustering_accuracy([0, 1], [0])

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            clustering_accuracy([], [])

    def test_rejects_fractional_labels(self):
        with pytest.raises(InvalidInputError):
            clustering_accuracy([0.5, 1.0], [0, 1])


class TestHungarian:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            size = int(rng.integers(1, 7))
            cost = rng.uniform(size=(size, size))
            perm = hungarian(cost)
            best = min(sum(cost[i, p[i]] for i in range(size)) for p in itertools.permutations(range(size)))
            assert cost[np.arange(size), perm].sum() == pytest.approx(best)
            assert sorted(perm) == list(range(size))

    def test_row_shift_keeps_assignment(self):
        cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
        shifted = cost + np.array([[10.0], [-3.0], [7.0]])
        np.testing.assert_array_equal(hungarian(cost), hungarian(shifted))

    def test_rejects_rectangular(self):
        with pytest.raises(InvalidInputError):
            hungarian(np.zeros((2, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            hungarian(np.array([[0.0, np.inf], [1.0, 0.0]]))


class TestNmi:
    def test_identical(self):
        assert nmi([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0

    def test_independent(self):
        assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(0.0, abs=1e-12)

    def test_both_single_cluster(self):
        assert nmi([3, 3, 3], [1, 1, 1]) == 1.0

    def test_one_single_cluster(self):
        assert nmi([0, 0, 0, 0], [0, 1, 0, 1]) == 0.0

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a = rng.integers(0, 4, size=30)
            b = rng.integers(0, 3, size=30)
            value = nmi(a, b)
            assert 0.0 <= value <= 1.0
            assert value == pytest.approx(nmi(b, a))

    def test_hand_value(self):
        # contingency [[2, 0], [1, 1]]
        counts = np.array([[2, 0], [1, 1]]) / 4
        px, py = counts.sum(axis=1), counts.sum(axis=0)
        mi = sum(counts[i, j] * np.log(counts[i, j] / (px[i] * py[j]))
                 for i in range(2) for j in range(2) if counts[i, j] > 0)
        h = max(-np.sum(px * np.log(px)), -np.sum(py * np.log(py)))
        assert nmi([0, 0, 1, 1], [0, 0, 0, 1]) == pytest.approx(mi / h)


class TestReport:
    def test_contingency(self):
        table = contingency_table([0, 0, 1], [1, 1, 1])
        np.testing.assert_array_equal(table.counts, [[2], [1]])
        assert table.n == 3

    def test_evaluate(self):
        report = evaluate([0, 0, 1, 1], [0, 1, 1, 1])
        assert report.acc == 0.75
        assert 0.0 < report.nmi < 1.0

    def test_json_record(self):
        record = json.loads(MetricReport(acc=0.5, nmi=0.25).to_json(dataset="blobs", method="km-z", seed=3))
        assert record == {"dataset": "blobs", "method": "km-z", "seed": 3, "acc": 0.5, "nmi": 0.25}

    def test_out_of_range(self):
        with pytest.raises(InvalidInputError):
            MetricReport(acc=1.5, nmi=0.0)


class TestLabelInvariance:
    def test_acc_and_nmi_ignore_label_names(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(2, 40))
            true = rng.integers(0, int(rng.integers(1, 6)), size=n)
            pred = rng.integers(0, int(rng.integers(1, 6)), size=n)
            acc, score = clustering_accuracy(true, pred), nmi(true, pred)
            for a, b in ((_relabel(true, rng), pred), (true, _relabel(pred, rng)),
                         (_relabel(true, rng), _relabel(pred, rng))):
                assert clustering_accuracy(a, b) == acc
                assert nmi(a, b) == pytest.approx(score, abs=1e-12)
