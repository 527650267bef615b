# app/services/evaluation_service.py

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from app.exception import InvalidInputError
from app.learners import ModelSpec, train_model
from app.learners.base import DECISION_THRESHOLD
from app.services.indicator_service import FeatureMatrix
from app.services.resampling_service import FoldAssignment, TomekReport, stratified_kfold, undersample
from app.utility import derive_seed

logger = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "youdens_j", "mcc", "ece")
DEFAULT_ECE_BINS = 10


@dataclass(frozen=True)
class ConfusionMatrix:
    """
    Confusion counts with VP as the positive class.

    Attributes:
        tp (int): VP predicted VP.
        tn (int): NVP predicted NVP.
        fp (int): NVP predicted VP.
        fn (int): VP predicted NVP.
    """

    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class ReliabilityBin:
    """
    One equal-width probability bin of a reliability diagram.

    Attributes:
        lower (float): Exclusive lower edge (inclusive for the first bin).
        upper (float): Inclusive upper edge.
        count (int): Rows in the bin.
        mean_confidence (float): Mean predicted VP probability (0 if empty).
        positive_fraction (float): Fraction of VP rows (0 if empty).
    """

    lower: float
    upper: float
    count: int
    mean_confidence: float
    positive_fraction: float

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "count": self.count,
            "mean_confidence": self.mean_confidence,
            "positive_fraction": self.positive_fraction,
        }


def _as_arrays(y_true, probs) -> tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true, dtype=int)
    probs = np.asarray(probs, dtype=float)
    if y_true.shape != probs.shape:
        raise InvalidInputError(
            f"Labels ({y_true.shape[0]}) and probabilities ({probs.shape[0]}) differ in length."
        )
    return y_true, probs


def confusion(y_true, probs, threshold: float = DECISION_THRESHOLD) -> ConfusionMatrix:
    """
    Tally the confusion matrix; probability >= threshold predicts VP.

    Raises:
        InvalidInputError: On a length mismatch or a threshold outside (0, 1).
    """
    y_true, probs = _as_arrays(y_true, probs)
    if not 0.0 < threshold < 1.0:
        raise InvalidInputError(f"Threshold must lie in (0, 1), got {threshold}.")
    predicted = probs >= threshold
    actual = y_true == 1
    return ConfusionMatrix(
        tp=int(np.sum(predicted & actual)),
        tn=int(np.sum(~predicted & ~actual)),
        fp=int(np.sum(predicted & ~actual)),
        fn=int(np.sum(~predicted & actual)),
    )


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator else 0.0


def classification_metrics(cm: ConfusionMatrix) -> dict[str, float]:
    """
    Compute accuracy, precision, recall and F1 (0 on a zero denominator).

    Raises:
        InvalidInputError: If the matrix is empty.
    """
    if cm.total == 0:
        raise InvalidInputError("Cannot score an empty confusion matrix.")
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    return {
        "accuracy": (cm.tp + cm.tn) / cm.total,
        "precision": precision,
        "recall": recall,
        "f1": _ratio(2 * precision * recall, precision + recall),
    }


def youdens_j(cm: ConfusionMatrix) -> float:
    """
    Sensitivity + specificity - 1.

    Raises:
        InvalidInputError: If the truth holds only one class.
    """
    if cm.tp + cm.fn == 0 or cm.tn + cm.fp == 0:
        raise InvalidInputError("Youden's J needs both VP and NVP rows.")
    return cm.tp / (cm.tp + cm.fn) + cm.tn / (cm.tn + cm.fp) - 1.0


def mcc(cm: ConfusionMatrix) -> float:
    """Matthews correlation coefficient; 0 when any marginal is zero."""
    product = (cm.tp + cm.fp) * (cm.tp + cm.fn) * (cm.tn + cm.fp) * (cm.tn + cm.fn)
    if product == 0:
        return 0.0
    return (cm.tp * cm.tn - cm.fp * cm.fn) / math.sqrt(product)


def bin_index(probs: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Map probabilities to right-closed bins; the first bin also holds its lower edge."""
    return np.clip(np.searchsorted(edges, probs, side="left") - 1, 0, len(edges) - 2)


def reliability_bins(y_true, probs, m_bins: int = DEFAULT_ECE_BINS) -> list[ReliabilityBin]:
    """
    Group predictions into m equal-width bins over [0, 1].

    Args:
        y_true: 0/1 labels.
        probs: Predicted VP probabilities in [0, 1].
        m_bins (int): Number of bins (>= 1).

    Returns:
        list[ReliabilityBin]: m bins, empty ones with count 0.

    Raises:
        InvalidInputError: On a bad bin count or probabilities outside [0, 1].
    """
    y_true, probs = _as_arrays(y_true, probs)
    if isinstance(m_bins, bool) or not isinstance(m_bins, int) or m_bins < 1:
        raise InvalidInputError(f"m_bins must be an integer >= 1, got {m_bins}.")
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
        raise InvalidInputError("Probabilities must lie in [0, 1].")

    edges = np.linspace(0.0, 1.0, m_bins + 1)
    index = bin_index(probs, edges)
    counts = np.bincount(index, minlength=m_bins)
    confidence_sums = np.bincount(index, weights=probs, minlength=m_bins)
    positive_sums = np.bincount(index, weights=y_true, minlength=m_bins)

    bins = []
    for m in range(m_bins):
        count = int(counts[m])
        bins.append(
            ReliabilityBin(
                lower=float(edges[m]),
                upper=float(edges[m + 1]),
                count=count,
                mean_confidence=float(confidence_sums[m] / count) if count else 0.0,
                positive_fraction=float(positive_sums[m] / count) if count else 0.0,
            )
        )
    return bins


def ece(bins: list[ReliabilityBin]) -> float:
    """Expected calibration error: count-weighted mean |positive_fraction - mean_confidence|."""
    n = sum(b.count for b in bins)
    if n == 0:
        return 0.0
    return float(sum(b.count / n * abs(b.positive_fraction - b.mean_confidence) for b in bins))


def max_calibration_error(bins: list[ReliabilityBin]) -> float:
    """Largest |positive_fraction - mean_confidence| over populated bins."""
    gaps = [abs(b.positive_fraction - b.mean_confidence) for b in bins if b.count]
    return float(max(gaps)) if gaps else 0.0


def bins_frame(bins: list[ReliabilityBin]) -> pd.DataFrame:
    """Return reliability bins as a DataFrame (one row per bin)."""
    return pd.DataFrame(
        [b.to_dict() for b in bins],
        columns=["lower", "upper", "count", "mean_confidence", "positive_fraction"],
    )


@dataclass
class MetricSet:
    """
    Every score of one set of predictions.

    Attributes:
        accuracy, precision, recall, f1, youdens_j, mcc, ece (float): Scores.
        mce (float): Maximum calibration error.
        bins (list[ReliabilityBin]): Reliability bins behind ece.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    youdens_j: float
    mcc: float
    ece: float
    mce: float = 0.0
    bins: list[ReliabilityBin] = field(default_factory=list)

    def to_dict(self) -> dict:
        data = {name: getattr(self, name) for name in METRIC_NAMES}
        data["mce"] = self.mce
        data["bins"] = [b.to_dict() for b in self.bins]
        return data


def evaluate_predictions(
    y_true, probs, m_bins: int = DEFAULT_ECE_BINS, threshold: float = DECISION_THRESHOLD
) -> MetricSet:
    """Score predicted probabilities against 0/1 labels."""
    cm = confusion(y_true, probs, threshold)
    bins = reliability_bins(y_true, probs, m_bins)
    return MetricSet(
        **classification_metrics(cm),
        youdens_j=youdens_j(cm),
        mcc=mcc(cm),
        ece=ece(bins),
        mce=max_calibration_error(bins),
        bins=bins,
    )


@dataclass
class CVResult:
    """
    Outcome of k-fold cross-validation of one spec.

    Attributes:
        spec (ModelSpec): The evaluated spec.
        folds (list[MetricSet]): Validation scores per fold.
        assignment (FoldAssignment): Row-to-fold assignment.
        oof_probs (np.ndarray): Out-of-fold VP probability of every row.
        train_rows (list[np.ndarray]): Rows each fold's model was trained on.
        tomek_reports (list[TomekReport | None]): Undersampling audit per fold.
        m_bins (int): Bin count of the calibration scores.
    """

    spec: ModelSpec
    folds: list[MetricSet]
    assignment: FoldAssignment
    oof_probs: np.ndarray
    train_rows: list[np.ndarray] = field(default_factory=list)
    tomek_reports: list[TomekReport | None] = field(default_factory=list)
    m_bins: int = DEFAULT_ECE_BINS

    @property
    def k(self) -> int:
        return len(self.folds)

    def mean(self, metric: str) -> float:
        """Arithmetic mean of a metric over folds."""
        return float(np.mean([getattr(f, metric) for f in self.folds]))

    def std(self, metric: str) -> float:
        """Population standard deviation of a metric over folds."""
        return float(np.std([getattr(f, metric) for f in self.folds]))

    def summary(self) -> dict[str, float]:
        """Mean of every metric over folds."""
        return {name: self.mean(name) for name in METRIC_NAMES}

    def oof_bins(self, y_true) -> list[ReliabilityBin]:
        """Reliability bins of the pooled out-of-fold probabilities."""
        return reliability_bins(y_true, self.oof_probs, self.m_bins)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "k": self.k,
            "mean": self.summary(),
            "std": {name: self.std(name) for name in METRIC_NAMES},
            "folds": [f.to_dict() for f in self.folds],
            "assignment": self.assignment.to_dict(),
            "tomek": [r.to_dict() if r else None for r in self.tomek_reports],
        }


def cross_validate(
    spec: ModelSpec,
    matrix: FeatureMatrix,
    k: int,
    seed: int,
    resample: bool = True,
    m_bins: int = DEFAULT_ECE_BINS,
) -> CVResult:
    """
    Stratified k-fold cross-validation of one spec.

    The training split of each fold is optionally Tomek-undersampled; the
    validation split never is. Scaling happens inside the model, fitted on
    the training split only.

    Args:
        spec (ModelSpec): Model to evaluate.
        matrix (FeatureMatrix): Labelled rows.
        k (int): Number of folds.
        seed (int): Seed of the fold shuffle (shared by every spec of a grid).
        resample (bool): Undersample training splits.
        m_bins (int): ECE bin count.

    Returns:
        CVResult: Fold scores, aggregates and out-of-fold probabilities.

    Raises:
        ResamplingError: If a class has fewer than k rows.
    """
    X, y = matrix.rows, matrix.labels
    assignment = stratified_kfold(y, k, derive_seed(seed, "folds"))
    oof = np.zeros(len(y))
    folds, train_rows, reports = [], [], []

    for fold in range(k):
        train_idx, val_idx = assignment.split(fold)
        report = None
        if resample:
            _, _, report = undersample(X[train_idx], y[train_idx])
            train_idx = np.delete(train_idx, report.removed)
        model = train_model(
            spec.with_seed(derive_seed(spec.seed, "fold", fold)), X[train_idx], y[train_idx]
        )
        probs = model.predict_proba(X[val_idx])
        oof[val_idx] = probs
        metrics = evaluate_predictions(y[val_idx], probs, m_bins)
        logger.debug(
            "%s fold %d: f1=%.4f mcc=%.4f ece=%.4f", spec.name, fold, metrics.f1, metrics.mcc, metrics.ece
        )
        folds.append(metrics)
        train_rows.append(train_idx)
        reports.append(report)

    return CVResult(
        spec=spec,
        folds=folds,
        assignment=assignment,
        oof_probs=oof,
        train_rows=train_rows,
        tomek_reports=reports,
        m_bins=m_bins,
    )
