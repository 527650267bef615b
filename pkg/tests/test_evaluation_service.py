# tests/test_evaluation_service.py

import math
from fractions import Fraction

import numpy as np
import pytest

from app.exception import InvalidInputError, ResamplingError
from app.learners import ModelSpec
from app.services.evaluation_service import (
    METRIC_NAMES,
    ConfusionMatrix,
    bin_index,
    bins_frame,
    classification_metrics,
    confusion,
    cross_validate,
    ece,
    evaluate_predictions,
    max_calibration_error,
    mcc,
    reliability_bins,
    youdens_j,
)
from app.services.indicator_service import N_FEATURES, FeatureMatrix

Y_TRUE = [1, 1, 1, 1, 0, 0, 0, 0]
PROBS = [0.9, 0.8, 0.6, 0.3, 0.7, 0.2, 0.1, 0.4]


def make_matrix(n=60, seed=0) -> FeatureMatrix:
    rng = np.random.default_rng(seed)
    rows = rng.standard_normal((n, N_FEATURES))
    labels = (rows[:, 0] + 0.3 * rng.standard_normal(n) > -0.3).astype(int)
    return FeatureMatrix(patent_ids=[f"P{i:03d}" for i in range(n)], rows=rows, labels=labels)


def exact_ratio(numerator: int, denominator: int) -> Fraction:
    return Fraction(numerator, denominator) if denominator else Fraction(0)


def tallied_metrics(y_true, probs) -> dict:
    tp = tn = fp = fn = 0
    for truth, prob in zip(y_true, probs):
        if prob >= 0.5:
            tp, fp = (tp + 1, fp) if truth == 1 else (tp, fp + 1)
        else:
            fn, tn = (fn + 1, tn) if truth == 1 else (fn, tn + 1)
    product = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return {
        "accuracy": Fraction(tp + tn, tp + tn + fp + fn),
        "precision": exact_ratio(tp, tp + fp),
        "recall": exact_ratio(tp, tp + fn),
        "f1": exact_ratio(2 * tp, 2 * tp + fp + fn),
        "youdens_j": Fraction(tp, tp + fn) + Fraction(tn, tn + fp) - 1,
        "mcc": (tp * tn - fp * fn) / math.sqrt(product) if product else 0.0,
    }


class TestConfusion:

    def test_counts(self):
        assert confusion(Y_TRUE, PROBS) == ConfusionMatrix(tp=3, tn=3, fp=1, fn=1)

    def test_threshold_is_inclusive(self):
        assert confusion([1], [0.5]).tp == 1

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError, match="differ in length"):
            confusion([1, 0], [0.5])

    @pytest.mark.parametrize("threshold", [0.0, 1.0])
    def test_threshold_range(self, threshold):
        with pytest.raises(InvalidInputError):
            confusion(Y_TRUE, PROBS, threshold)


class TestMetrics:

    def test_hand_computed(self):
        metrics = evaluate_predictions(Y_TRUE, PROBS, m_bins=10)

        assert metrics.accuracy == pytest.approx(0.75)
        assert metrics.precision == pytest.approx(0.75)
        assert metrics.recall == pytest.approx(0.75)
        assert metrics.f1 == pytest.approx(0.75)
        assert metrics.youdens_j == pytest.approx(0.5)
        assert metrics.mcc == pytest.approx(0.5)
        assert metrics.ece == pytest.approx(0.3)
        assert metrics.mce == pytest.approx(0.7)

    def test_matches_tallies_on_random_fixtures(self):
        rng = np.random.default_rng(2024)

        for _ in range(1000):
            n = int(rng.integers(2, 501))
            y = rng.integers(0, 2, n)
            y[:2] = [1, 0]
            # two decimals so some probabilities sit exactly on the threshold
            probs = np.round(rng.random(n), 2)
            cm = confusion(y, probs)
            actual = {**classification_metrics(cm), "youdens_j": youdens_j(cm), "mcc": mcc(cm)}

            expected = tallied_metrics(y.tolist(), probs.tolist())

            for name, value in expected.items():
                assert actual[name] == pytest.approx(float(value), abs=1e-12), name

    def test_zero_denominators(self):
        metrics = classification_metrics(ConfusionMatrix(tp=0, tn=5, fp=0, fn=3))

        assert metrics["precision"] == 0.0
        assert metrics["f1"] == 0.0
        assert metrics["accuracy"] == pytest.approx(5 / 8)

    def test_empty_matrix(self):
        with pytest.raises(InvalidInputError):
            classification_metrics(ConfusionMatrix(0, 0, 0, 0))

    def test_youdens_j_needs_both_classes(self):
        with pytest.raises(InvalidInputError, match="both VP and NVP"):
            youdens_j(ConfusionMatrix(tp=3, tn=0, fp=0, fn=1))

    @pytest.mark.parametrize(
        "cm, expected",
        [
            (ConfusionMatrix(tp=4, tn=4, fp=0, fn=0), 1.0),
            (ConfusionMatrix(tp=0, tn=0, fp=4, fn=4), -1.0),
            (ConfusionMatrix(tp=4, tn=0, fp=4, fn=0), 0.0),
        ],
    )
    def test_mcc(self, cm, expected):
        assert mcc(cm) == pytest.approx(expected)

    def test_metric_set_dict(self):
        data = evaluate_predictions(Y_TRUE, PROBS).to_dict()

        assert set(METRIC_NAMES) <= set(data)
        assert len(data["bins"]) == 10


class TestCalibration:

    def test_bins_are_right_closed(self):
        edges = np.linspace(0.0, 1.0, 11)

        assert bin_index(np.array([0.0, 0.5, 0.5000001, 1.0]), edges).tolist() == [0, 4, 5, 9]

    def test_two_bin_calibration_is_perfect(self):
        bins = reliability_bins(Y_TRUE, PROBS, m_bins=2)

        assert [b.count for b in bins] == [4, 4]
        assert ece(bins) == pytest.approx(0.0)

    def test_overconfident_predictions(self):
        bins = reliability_bins([0, 0, 0], [1.0, 1.0, 1.0])

        assert ece(bins) == pytest.approx(1.0)
        assert max_calibration_error(bins) == pytest.approx(1.0)

    def test_empty_bins(self):
        bins = reliability_bins([1, 0], [0.95, 0.05], m_bins=5)

        assert [b.count for b in bins] == [1, 0, 0, 0, 1]
        assert bins[2].mean_confidence == 0.0
        assert sum(b.count for b in bins) == 2

    def test_calibrated_predictor(self):
        rng = np.random.default_rng(0)
        probs = rng.random(100_000)
        y = (rng.random(100_000) < probs).astype(int)

        assert ece(reliability_bins(y, probs)) < 0.01

    def test_inverted_predictor(self):
        rng = np.random.default_rng(1)
        y = rng.integers(0, 2, 1000)

        assert ece(reliability_bins(y, 1.0 - y)) > 0.95

    def test_no_predictions(self):
        assert ece(reliability_bins([], [])) == 0.0

    @pytest.mark.parametrize("m_bins", [0, True, 2.5])
    def test_invalid_bin_count(self, m_bins):
        with pytest.raises(InvalidInputError):
            reliability_bins(Y_TRUE, PROBS, m_bins)

    def test_probability_out_of_range(self):
        with pytest.raises(InvalidInputError, match=r"\[0, 1\]"):
            reliability_bins([1], [1.2])

    def test_bins_frame(self):
        frame = bins_frame(reliability_bins(Y_TRUE, PROBS, m_bins=4))

        assert list(frame.columns) == ["lower", "upper", "count", "mean_confidence", "positive_fraction"]
        assert len(frame) == 4


class TestCrossValidate:

    @pytest.fixture(scope="class")
    def matrix(self):
        return make_matrix()

    @pytest.fixture(scope="class")
    def spec(self):
        return ModelSpec.create("LR", {"epochs": 30}, seed=5, name="LR #1")

    def test_every_row_validated_once(self, matrix, spec):
        result = cross_validate(spec, matrix, k=3, seed=1)

        assert result.k == 3
        assert result.assignment.fold_sizes() == [20, 20, 20]
        assert ((result.oof_probs >= 0) & (result.oof_probs <= 1)).all()

    def test_training_rows_exclude_validation_fold(self, matrix, spec):
        result = cross_validate(spec, matrix, k=3, seed=1)

        for fold, rows in enumerate(result.train_rows):
            _, val_idx = result.assignment.split(fold)
            assert set(rows).isdisjoint(val_idx)

    def test_undersampling_only_touches_training_rows(self, matrix, spec):
        plain = cross_validate(spec, matrix, k=3, seed=1, resample=False)
        resampled = cross_validate(spec, matrix, k=3, seed=1, resample=True)

        assert plain.tomek_reports == [None, None, None]
        for fold in range(3):
            removed = len(resampled.tomek_reports[fold].removed)
            assert len(resampled.train_rows[fold]) == len(plain.train_rows[fold]) - removed

    def test_deterministic(self, matrix, spec):
        first = cross_validate(spec, matrix, k=3, seed=1)
        second = cross_validate(spec, matrix, k=3, seed=1)

        assert first.summary() == second.summary()
        assert first.oof_probs.tolist() == second.oof_probs.tolist()

    def test_summary_is_fold_mean(self, matrix, spec):
        result = cross_validate(spec, matrix, k=3, seed=1)

        assert result.summary()["f1"] == pytest.approx(np.mean([f.f1 for f in result.folds]))
        assert result.to_dict()["std"]["mcc"] == pytest.approx(np.std([f.mcc for f in result.folds]))

    def test_too_few_rows_per_class(self, spec):
        matrix = make_matrix(n=6, seed=3)

        with pytest.raises(ResamplingError):
            cross_validate(spec, matrix, k=5, seed=1)
