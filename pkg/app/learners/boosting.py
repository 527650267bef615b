# app/learners/boosting.py

from __future__ import annotations

import logging

import numpy as np

from app.exception import TrainingError
from app.learners.base import (
    ModelFamily,
    ModelSpec,
    TrainedModel,
    check_training_data,
    log_loss,
    resolve_hyperparameters,
    sigmoid,
)
from app.learners.tree import Tree, build_gradient_tree

logger = logging.getLogger(__name__)

MAX_HALVINGS = 10
BASE_RATE_EPS = 1e-12


class BoostingModel(TrainedModel):
    """
    Gradient-boosted trees: sigmoid(base_score + sum of scaled tree outputs).
    """

    def __init__(
        self, spec, n_features, scaler=None, metadata=None, base_score=0.0, trees=None, scales=None
    ) -> None:
        super().__init__(spec, n_features, scaler, metadata)
        self.base_score = float(base_score)
        self.trees: list[Tree] = trees or []
        self.scales: list[float] = scales or []

    def raw_score(self, X: np.ndarray) -> np.ndarray:
        """Return the summed log-odds of every (already scaled) row."""
        raw = np.full(X.shape[0], self.base_score)
        for tree, scale in zip(self.trees, self.scales):
            raw += scale * tree.predict(X)
        return raw

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.raw_score(X))

    def params_to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "trees": [tree.to_dict() for tree in self.trees],
            "scales": list(self.scales),
        }

    @classmethod
    def params_from_dict(cls, data: dict) -> dict:
        return {
            "base_score": data["base_score"],
            "trees": [Tree.from_dict(t) for t in data["trees"]],
            "scales": [float(s) for s in data["scales"]],
        }


def base_log_odds(y: np.ndarray) -> float:
    """Return the log-odds of the positive rate (clipped away from 0 and 1)."""
    rate = float(np.clip(np.mean(y), BASE_RATE_EPS, 1.0 - BASE_RATE_EPS))
    return float(np.log(rate / (1.0 - rate)))


def train_gradient_boosting(X: np.ndarray, y: np.ndarray, spec: ModelSpec) -> BoostingModel:
    """
    Train stagewise additive trees on the logistic loss.

    Each stage fits a tree to the gradient/hessian of the current scores and
    adds it with the learning rate. A stage that would raise the training
    loss has its step halved up to MAX_HALVINGS times and is dropped if the
    loss still rises, so the loss trace never increases.

    Args:
        X (np.ndarray): (n, d) raw training rows.
        y (np.ndarray): 0/1 labels.
        spec (ModelSpec): XGB spec.

    Returns:
        BoostingModel: The fitted ensemble.

    Raises:
        TrainingError: If a stage produces a non-finite score.
    """
    params = resolve_hyperparameters(ModelFamily.XGB, spec.hyperparameters)
    X, y = check_training_data(X, y)

    base = base_log_odds(y)
    raw = np.full(X.shape[0], base)
    loss = log_loss(y, raw)
    trace, trees, scales, dropped = [loss], [], [], []

    for stage in range(1, params["n_estimators"] + 1):
        p = sigmoid(raw)
        tree = build_gradient_tree(
            X,
            p - y,
            p * (1.0 - p),
            params["max_depth"],
            params["reg_alpha"],
            params["reg_lambda"],
            params["gamma"],
            params["min_child_weight"],
        )
        update = tree.predict(X)
        if not np.isfinite(update).all():
            raise TrainingError(f"non-finite score at boosting stage {stage}")

        scale = params["learning_rate"]
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            candidate = raw + scale * update
            candidate_loss = log_loss(y, candidate)
            if not np.isfinite(candidate_loss):
                raise TrainingError(f"non-finite loss at boosting stage {stage}")
            if candidate_loss <= loss:
                accepted = True
                break
            scale /= 2.0

        if accepted:
            if scale != params["learning_rate"]:
                logger.debug("Stage %d step reduced to %g", stage, scale)
            trees.append(tree)
            scales.append(scale)
            raw, loss = candidate, candidate_loss
        else:
            logger.debug("Stage %d dropped: no loss decrease", stage)
            dropped.append(stage)
        trace.append(loss)

    return BoostingModel(
        spec,
        X.shape[1],
        metadata={"seed": spec.seed, "stages": len(trees), "dropped_stages": dropped, "loss_trace": trace},
        base_score=base,
        trees=trees,
        scales=scales,
    )
