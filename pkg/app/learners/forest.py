# app/learners/forest.py

from __future__ import annotations

import logging
import math

import numpy as np

from app.learners.base import (
    ModelFamily,
    ModelSpec,
    TrainedModel,
    check_training_data,
    resolve_hyperparameters,
)
from app.learners.tree import Tree, build_classification_tree

logger = logging.getLogger(__name__)


class ForestModel(TrainedModel):
    """
    Random forest: the mean of per-tree leaf positive fractions.
    """

    def __init__(self, spec, n_features, scaler=None, metadata=None, trees=None) -> None:
        super().__init__(spec, n_features, scaler, metadata)
        self.trees: list[Tree] = trees or []

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)

    def params_to_dict(self) -> dict:
        return {"trees": [tree.to_dict() for tree in self.trees]}

    @classmethod
    def params_from_dict(cls, data: dict) -> dict:
        return {"trees": [Tree.from_dict(t) for t in data["trees"]]}


def split_feature_count(setting: str | int, n_features: int) -> int:
    """Resolve features_per_split ("sqrt", "all" or a count) for a width."""
    if setting == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if setting == "all":
        return n_features
    return min(int(setting), n_features)


def train_random_forest(X: np.ndarray, y: np.ndarray, spec: ModelSpec) -> ForestModel:
    """
    Train a random forest of CART trees on bootstrap samples.

    Args:
        X (np.ndarray): (n, d) raw training rows (trees need no scaling).
        y (np.ndarray): 0/1 labels.
        spec (ModelSpec): RF spec (n_trees, max_depth, min_leaf,
            features_per_split, bootstrap).

    Returns:
        ForestModel: The fitted forest.

    Raises:
        ModelConfigError: On invalid hyperparameters (e.g. max_depth < 1).
    """
    params = resolve_hyperparameters(ModelFamily.RF, spec.hyperparameters)
    X, y = check_training_data(X, y)
    n, d = X.shape
    m = split_feature_count(params["features_per_split"], d)
    rng = np.random.default_rng(spec.seed)

    trees = []
    for _ in range(params["n_trees"]):
        sample = rng.integers(0, n, size=n) if params["bootstrap"] else np.arange(n)
        trees.append(
            build_classification_tree(
                X[sample], y[sample], params["max_depth"], params["min_leaf"], m, rng
            )
        )
    logger.debug("Trained %d trees (mean leaves %.1f)", len(trees), np.mean([t.n_leaves for t in trees]))
    return ForestModel(
        spec,
        d,
        metadata={"seed": spec.seed, "n_trees": len(trees), "features_per_split": m},
        trees=trees,
    )
