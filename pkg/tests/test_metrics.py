import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankmil.errors import InputError, MetricUndefinedError
from rankmil.metrics import accuracy, auc_roc, finite_threshold, select_threshold


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == -1]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def labelled_scores(max_size=30):
    """Scores drawn from a small grid so ties are frequent, with both classes present."""
    return st.integers(2, max_size).flatmap(
        lambda n: st.tuples(
            st.lists(st.integers(-5, 5).map(float), min_size=n, max_size=n),
            st.lists(st.sampled_from([1, -1]), min_size=n, max_size=n).filter(
                lambda ys: 1 in ys and -1 in ys
            ),
        )
    )


class TestAuc:
    def test_perfect(self):
        assert auc_roc([3, 4, 1, 2], [1, 1, -1, -1]) == 1.0

    def test_reversed(self):
        assert auc_roc([1, 2, 3, 4], [1, 1, -1, -1]) == 0.0

    def test_all_tied(self):
        assert auc_roc([7.0] * 6, [1, -1, 1, -1, -1, 1]) == 0.5

    def test_half_credit(self):
        # pairs: (2 vs 1) win, (2 vs 2) tie
        assert auc_roc([2, 1, 2], [1, -1, -1]) == 0.75

    @settings(max_examples=200, deadline=None)
    @given(labelled_scores())
    def test_matches_brute_force(self, data):
        scores, labels = data
        assert auc_roc(scores, labels) == pytest.approx(brute_auc(scores, labels), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(labelled_scores())
    def test_monotone_transform_invariance(self, data):
        scores, labels = data
        s = np.array(scores)
        assert auc_roc(np.exp(s) * 3 + 1, labels) == auc_roc(s, labels)

    def test_negation_complements(self, rng):
        s = rng.normal(size=40)
        y = np.where(np.arange(40) < 17, 1, -1)
        assert auc_roc(s, y) + auc_roc(-s, y) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("labels", [[1, 1, 1], [-1, -1]])
    def test_single_class(self, labels):
        with pytest.raises(MetricUndefinedError):
            auc_roc(np.zeros(len(labels)), labels)

    def test_bad_labels(self):
        with pytest.raises(InputError):
            auc_roc([1, 2], [1, 0])


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([2, 3, 0, 1], [1, 1, -1, -1], 1.5) == 1.0

    def test_infinite_threshold_predicts_negative(self):
        assert accuracy([2, 3, 0, 1, 5], [1, 1, -1, -1, -1], np.inf) == pytest.approx(3 / 5)

    def test_hand_count(self):
        scores = [0.9, 0.2, 0.6, 0.4, 0.5, 0.1]
        labels = [1, 1, -1, -1, 1, -1]
        # > 0.45 -> + + at 0.9, 0.6, 0.5 ; correct: 0.9, 0.5, 0.4, 0.1
        assert accuracy(scores, labels, 0.45) == pytest.approx(4 / 6)

    def test_boundary_is_negative(self):
        assert accuracy([1.0], [-1], 1.0) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(InputError):
            accuracy([1, 2, 3], [1, -1], 0.0)


def exhaustive_best(scores, labels):
    grid = np.unique(np.concatenate([scores, [-1e9, 1e9]]))
    probes = np.concatenate([grid, (grid[:-1] + grid[1:]) / 2])
    return max(accuracy(scores, labels, t) for t in probes)


class TestSelectThreshold:
    def test_midpoint(self):
        assert select_threshold([2, 3, 0, 1], [1, 1, -1, -1]) == 1.5

    def test_symmetric_pair(self):
        assert select_threshold([5.0, -5.0], [1, -1]) == 0.0

    def test_inverted_scores_fall_back_to_majority(self):
        scores = [0.0, 1.0, 2.0, 3.0, 4.0]
        labels = [1, -1, -1, -1, -1]
        t = select_threshold(scores, labels)
        assert accuracy(scores, labels, t) == pytest.approx(0.8)
        assert t == np.inf
        ft = finite_threshold(t, scores)
        assert np.isfinite(ft) and accuracy(scores, labels, ft) == pytest.approx(0.8)

    def test_minus_infinity_sentinel(self):
        scores = [0.0, 1.0, 2.0]
        labels = [1, 1, -1]
        t = select_threshold(scores, labels)
        assert accuracy(scores, labels, t) == pytest.approx(2 / 3)
        ft = finite_threshold(t, scores)
        assert accuracy(scores, labels, ft) == accuracy(scores, labels, t)

    def test_tie_prefers_median(self):
        # cutting at 0.5 or 2.5 both give 3/4; the median of the scores is 1.5
        scores = [0.0, 1.0, 2.0, 3.0]
        labels = [-1, 1, -1, 1]
        t = select_threshold(scores, labels)
        assert accuracy(scores, labels, t) == 0.75
        assert t == 0.5

    @settings(max_examples=150, deadline=None)
    @given(labelled_scores(20))
    def test_matches_exhaustive_scan(self, data):
        scores, labels = np.array(data[0]), np.array(data[1])
        t = select_threshold(scores, labels)
        best = exhaustive_best(scores, labels)
        assert accuracy(scores, labels, t) == pytest.approx(best)
        majority = max(np.mean(labels == 1), np.mean(labels == -1))
        assert accuracy(scores, labels, t) >= majority - 1e-12
        ft = finite_threshold(t, scores)
        assert accuracy(scores, labels, ft) == accuracy(scores, labels, t)
