# tests/test_resampling_service.py

import numpy as np
import pytest
from sklearn.model_selection import StratifiedKFold

from app.exception import ResamplingError
from app.services.resampling_service import (
    find_tomek_links,
    majority_class,
    nearest_neighbors,
    stratified_kfold,
    undersample,
)


def brute_force_links(X, y):
    n = len(y)
    nearest = []
    for a in range(n):
        best, best_dist = None, None
        for b in range(n):
            if a == b:
                continue
            dist = float(np.sum((X[a] - X[b]) ** 2))
            if best_dist is None or dist < best_dist:
                best, best_dist = b, dist
        nearest.append(best)
    majority = 1 if sum(y) >= n - sum(y) else 0
    return sorted(
        (a, nearest[a])
        for a in range(n)
        if y[a] != y[nearest[a]] and nearest[nearest[a]] == a and y[a] != majority
    )


@pytest.fixture
def line_data():
    X = np.array([[0.0], [1.0], [10.0], [11.0], [20.0], [30.0]])
    y = np.array([1, 0, 0, 0, 0, 1])
    return X, y


class TestTomekLinks:

    def test_hand_example(self, line_data):
        X, y = line_data

        assert find_tomek_links(X, y) == [(0, 1)]

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 201))
        X = rng.standard_normal((n, int(rng.integers(1, 6))))
        y = (rng.random(n) < rng.uniform(0.15, 0.5)).astype(int)
        y[:2] = [1, 0]

        links = find_tomek_links(X, y)

        assert links == brute_force_links(X, y.tolist())
        assert all(y[minority] != majority_class(y) for minority, _ in links)

    def test_single_class(self):
        with pytest.raises(ResamplingError, match="both classes"):
            find_tomek_links(np.zeros((3, 1)), np.array([1, 1, 1]))

    def test_identical_rows_with_opposite_labels(self):
        X = np.array([[1.0, 2.0], [1.0, 2.0], [5.0, 5.0]])

        with pytest.raises(ResamplingError, match="identical"):
            find_tomek_links(X, np.array([1, 0, 0]))

    def test_nearest_neighbor_ties_take_lowest_index(self):
        X = np.array([[0.0], [0.0], [1.0]])

        assert nearest_neighbors(X, np.array([1, 1, 0])).tolist() == [1, 0, 0]

    def test_unknown_metric(self, line_data):
        X, y = line_data

        with pytest.raises(ResamplingError):
            find_tomek_links(X, y, metric="cosine")

    def test_majority_tie_is_vp(self):
        assert majority_class(np.array([0, 1])) == 1
        assert majority_class(np.array([0, 0, 1])) == 0


class TestUndersample:

    def test_removes_majority_member_only(self, line_data):
        X, y = line_data

        X_kept, y_kept, report = undersample(X, y, standardize=False)

        assert report.removed == [1]
        assert X_kept[:, 0].tolist() == [0.0, 10.0, 11.0, 20.0, 30.0]
        assert y_kept.tolist() == [1, 0, 0, 0, 1]
        assert report.to_dict() == {
            "links": [[0, 1]],
            "removed": [1],
            "distance_metric": "euclidean",
        }

    def test_minority_rows_survive(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((60, 4))
        y = (rng.random(60) < 0.25).astype(int)

        _, y_kept, report = undersample(X, y)

        assert np.sum(y_kept == 1) == np.sum(y == 1)
        assert len(y_kept) == len(y) - len(report.removed)

    def test_survivors_are_unscaled_rows_in_order(self):
        X = np.array([[0.0, 0.0], [0.1, 100.0], [1.0, 0.0], [1.1, 100.0]])
        y = np.array([1, 0, 0, 0])

        X_kept, _, report = undersample(X, y)

        keep = [i for i in range(4) if i not in report.removed]
        assert X_kept.tolist() == X[keep].tolist()


class TestStratifiedKFold:

    @pytest.fixture
    def labels(self):
        return np.array([1] * 17 + [0] * 8)

    def test_fold_sizes_are_balanced(self, labels):
        folds = stratified_kfold(labels, 5, seed=3)

        assert sum(folds.fold_sizes()) == 25
        assert max(folds.fold_sizes()) - min(folds.fold_sizes()) <= 1

    def test_each_class_is_spread(self, labels):
        folds = stratified_kfold(labels, 5, seed=3)

        for label in (0, 1):
            per_fold = np.bincount(folds.assignment[labels == label], minlength=5)
            assert per_fold.max() - per_fold.min() <= 1

    def test_splits_partition_rows(self, labels):
        folds = stratified_kfold(labels, 4, seed=9)
        validation = np.concatenate([folds.split(f)[1] for f in range(4)])

        assert sorted(validation.tolist()) == list(range(25))
        train, valid = folds.split(0)
        assert set(train).isdisjoint(valid)

    def test_folds_follow_stratified_kfold(self, labels):
        folds = stratified_kfold(labels, 5, seed=3)
        reference = StratifiedKFold(n_splits=5, shuffle=True, random_state=3)

        for fold, (_, validation) in enumerate(reference.split(np.zeros((25, 1)), labels)):
            assert folds.split(fold)[1].tolist() == validation.tolist()

    def test_deterministic(self, labels):
        a = stratified_kfold(labels, 5, seed=3)
        b = stratified_kfold(labels, 5, seed=3)
        c = stratified_kfold(labels, 5, seed=4)

        assert a.assignment.tolist() == b.assignment.tolist()
        assert a.assignment.tolist() != c.assignment.tolist()

    @pytest.mark.parametrize("k", [1, 0, True, 2.5])
    def test_invalid_k(self, labels, k):
        with pytest.raises(ResamplingError):
            stratified_kfold(labels, k, seed=0)

    def test_class_smaller_than_k(self):
        with pytest.raises(ResamplingError, match="NVP has 2"):
            stratified_kfold(np.array([1, 1, 1, 0, 0]), 3, seed=0)
