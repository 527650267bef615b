# app/services/resampling_service.py

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import pairwise_distances_chunked
from sklearn.model_selection import StratifiedKFold

from app.exception import ResamplingError
from app.learners.scaler import fit_scaler

logger = logging.getLogger(__name__)

EUCLIDEAN = "euclidean"


@dataclass
class TomekReport:
    """
    Audit record of one undersampling pass.

    Attributes:
        links (list[tuple[int, int]]): (minority row, majority row) pairs.
        removed (list[int]): Removed (majority) row indices, ascending.
        distance_metric (str): Always "euclidean".
    """

    links: list[tuple[int, int]] = field(default_factory=list)
    removed: list[int] = field(default_factory=list)
    distance_metric: str = EUCLIDEAN

    def to_dict(self) -> dict:
        """Return a dictionary representation of the report."""
        return {
            "links": [list(pair) for pair in self.links],
            "removed": list(self.removed),
            "distance_metric": self.distance_metric,
        }


@dataclass
class FoldAssignment:
    """
    Stratified assignment of rows to k folds.

    Attributes:
        k (int): Number of folds.
        assignment (np.ndarray): Fold id of every row.
        seed (int): Seed the shuffle was drawn from.
    """

    k: int
    assignment: np.ndarray
    seed: int

    def fold_sizes(self) -> list[int]:
        """Return the number of rows in each fold."""
        return np.bincount(self.assignment, minlength=self.k).tolist()

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (training rows, validation rows) of one fold."""
        return (
            np.flatnonzero(self.assignment != fold),
            np.flatnonzero(self.assignment == fold),
        )

    def to_dict(self) -> dict:
        """Return a dictionary representation of the assignment."""
        return {"k": self.k, "seed": self.seed, "assignment": self.assignment.tolist()}


def _check_two_classes(y: np.ndarray) -> None:
    classes = np.unique(y)
    if classes.size != 2:
        raise ResamplingError(
            f"Tomek links need rows of both classes; got classes {classes.tolist()}."
        )


def majority_class(y: np.ndarray) -> int:
    """Return the label with more rows (1 on a tie)."""
    y = np.asarray(y)
    return 1 if np.sum(y == 1) >= np.sum(y == 0) else 0


def nearest_neighbors(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Return each row's nearest other row (lowest index on ties).

    Raises:
        ResamplingError: If two rows with opposite labels coincide.
    """

    def reduce(dist: np.ndarray, start: int) -> tuple[np.ndarray, np.ndarray]:
        rows = np.arange(start, start + dist.shape[0])
        clash = (dist == 0.0) & (y[rows, None] != y[None, :])
        partner = np.where(clash.any(axis=1), clash.argmax(axis=1), -1)
        dist[rows - start, rows] = np.inf
        return np.argmin(dist, axis=1), partner

    # minkowski p=2 goes through scipy and is exact, so coincident rows give 0.0
    nearest_chunks, partner_chunks = [], []
    for nearest, partner in pairwise_distances_chunked(X, metric="minkowski", p=2, reduce_func=reduce):
        nearest_chunks.append(nearest)
        partner_chunks.append(partner)

    partners = np.concatenate(partner_chunks)
    clashing = np.flatnonzero(partners >= 0)
    if clashing.size:
        a = int(clashing[0])
        raise ResamplingError(f"Rows {a} and {partners[a]} are identical but carry opposite labels.")
    return np.concatenate(nearest_chunks)


def find_tomek_links(
    X: np.ndarray, y: np.ndarray, metric: str = EUCLIDEAN
) -> list[tuple[int, int]]:
    """
    Find all opposite-class pairs that are mutual nearest neighbours.

    Args:
        X (np.ndarray): (n, d) rows.
        y (np.ndarray): 0/1 labels.
        metric (str): Distance metric; only "euclidean" is supported.

    Returns:
        list[tuple[int, int]]: (minority row, majority row), sorted.

    Raises:
        ResamplingError: On single-class input, coinciding opposite rows, or an
            unknown metric.
    """
    if metric != EUCLIDEAN:
        raise ResamplingError(f"Unsupported distance metric '{metric}'.")
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    y = np.asarray(y)
    _check_two_classes(y)

    nearest = nearest_neighbors(X, y)
    majority = majority_class(y)
    links = []
    for a in range(len(y)):
        b = nearest[a]
        if y[a] != y[b] and nearest[b] == a and y[a] != majority:
            links.append((a, int(b)))
    return sorted(links)


def undersample(
    X: np.ndarray, y: np.ndarray, standardize: bool = True
) -> tuple[np.ndarray, np.ndarray, TomekReport]:
    """
    Remove the majority member of every Tomek link (one pass).

    Args:
        X (np.ndarray): (n, d) rows.
        y (np.ndarray): 0/1 labels.
        standardize (bool): Measure distances on standardized columns.

    Returns:
        tuple: surviving rows, their labels, and the TomekReport. Survivors keep
            their original relative order.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    distance_rows = fit_scaler(X).transform(X) if standardize else X
    links = find_tomek_links(distance_rows, y)
    removed = sorted({majority_row for _, majority_row in links})
    keep = np.setdiff1d(np.arange(len(y)), removed)
    logger.debug("Tomek pass: %d links, %d of %d rows removed", len(links), len(removed), len(y))
    return X[keep], y[keep], TomekReport(links=links, removed=removed)


def stratified_kfold(y: np.ndarray, k: int, seed: int) -> FoldAssignment:
    """
    Assign rows to k folds, stratified by label.

    Wraps scikit-learn's shuffled StratifiedKFold: every class is spread over
    the folds as evenly as possible and fold sizes differ by at most one.

    Args:
        y (np.ndarray): 0/1 labels.
        k (int): Number of folds (>= 2).
        seed (int): Shuffle seed.

    Returns:
        FoldAssignment: Deterministic for fixed (y, k, seed).

    Raises:
        ResamplingError: If k < 2 or a class has fewer than k rows.
    """
    y = np.asarray(y)
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 2:
        raise ResamplingError(f"k must be an integer >= 2, got {k}.")
    if np.setdiff1d(np.unique(y), [0, 1]).size:
        raise ResamplingError("Labels must be 0 (NVP) or 1 (VP).")
    for label in (0, 1):
        count = int(np.sum(y == label))
        if count < k:
            name = "VP" if label == 1 else "NVP"
            raise ResamplingError(f"k={k} folds need at least {k} rows per class; {name} has {count}.")

    folds = StratifiedKFold(n_splits=int(k), shuffle=True, random_state=seed)
    assignment = np.empty(len(y), dtype=int)
    for fold, (_, validation) in enumerate(folds.split(np.zeros((len(y), 1)), y)):
        assignment[validation] = fold
    return FoldAssignment(k=int(k), assignment=assignment, seed=seed)
