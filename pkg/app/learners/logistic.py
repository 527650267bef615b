# app/learners/logistic.py

from __future__ import annotations

import logging

import numpy as np

from app.exception import InvalidInputError, TrainingError
from app.learners.base import (
    ModelFamily,
    ModelSpec,
    TrainedModel,
    check_training_data,
    log_loss,
    resolve_hyperparameters,
    sigmoid,
)
from app.learners.scaler import Scaler, fit_scaler
from app.learners.tree import soft_threshold

logger = logging.getLogger(__name__)


class LogisticModel(TrainedModel):
    """
    Logistic regression on standardized features.

    Attributes:
        coef (np.ndarray): Weights in the standardized space.
        intercept (float): Unpenalised bias.
    """

    def __init__(self, spec, n_features, scaler=None, metadata=None, coef=None, intercept=0.0) -> None:
        super().__init__(spec, n_features, scaler, metadata)
        self.coef = np.zeros(n_features) if coef is None else np.asarray(coef, dtype=float)
        self.intercept = float(intercept)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(X @ self.coef + self.intercept)

    def raw_coefficients(self) -> tuple[np.ndarray, float]:
        """Return (weights, intercept) on the original feature scale."""
        if self.scaler is None:
            return self.coef.copy(), self.intercept
        weights = self.coef / self.scaler.scale
        return weights, float(self.intercept - np.sum(weights * self.scaler.mean))

    def params_to_dict(self) -> dict:
        return {"coef": self.coef.tolist(), "intercept": self.intercept}

    @classmethod
    def params_from_dict(cls, data: dict) -> dict:
        return {"coef": data["coef"], "intercept": data["intercept"]}


def logistic_loss_and_gradient(
    w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float = 0.0
) -> tuple[float, np.ndarray, float]:
    """
    Mean logistic loss plus l2/2 * ||w||^2, and its gradient.

    Returns:
        tuple: (loss, gradient w.r.t. w, gradient w.r.t. b)
    """
    raw = X @ w + b
    residual = sigmoid(raw) - y
    loss = log_loss(y, raw) + 0.5 * l2 * float(w @ w)
    grad_w = X.T @ residual / X.shape[0] + l2 * w
    grad_b = float(residual.mean())
    return loss, grad_w, grad_b


def elastic_net_objective(
    w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, lam: float, alpha: float
) -> float:
    """Mean logistic loss + lam * (alpha * ||w||_1 + (1 - alpha) / 2 * ||w||^2)."""
    penalty = lam * (alpha * np.sum(np.abs(w)) + 0.5 * (1.0 - alpha) * float(w @ w))
    return log_loss(y, X @ w + b) + float(penalty)


def train_logistic_elastic_net(X: np.ndarray, y: np.ndarray, spec: ModelSpec) -> LogisticModel:
    """
    Fit elastic-net logistic regression by full-batch proximal gradient descent.

    The step is min(learning_rate, 1/L) where L bounds the curvature of the
    mean logistic loss; the whole penalty is applied through its proximal
    operator, so the objective trace is nonincreasing.

    Args:
        X (np.ndarray): (n, d) raw training rows; standardized internally.
        y (np.ndarray): 0/1 labels, both classes present.
        spec (ModelSpec): LR spec (alpha, lambda, epochs, learning_rate).

    Returns:
        LogisticModel: The fitted model with its scaler.

    Raises:
        InvalidInputError: If only one class is present.
        TrainingError: If the objective becomes non-finite.
    """
    params = resolve_hyperparameters(ModelFamily.LR, spec.hyperparameters)
    X, y = check_training_data(X, y)
    if np.unique(y).size < 2:
        raise InvalidInputError("Logistic regression needs both classes in the training data.")

    scaler = fit_scaler(X)
    Xs = scaler.transform(X)
    n = Xs.shape[0]
    lam, alpha = params["lambda"], params["alpha"]

    augmented = np.hstack([Xs, np.ones((n, 1))])
    lipschitz = np.linalg.norm(augmented, 2) ** 2 / (4.0 * n)
    step = min(params["learning_rate"], 1.0 / lipschitz)

    w = np.zeros(Xs.shape[1])
    b = 0.0
    trace = []
    for epoch in range(1, params["epochs"] + 1):
        _, grad_w, grad_b = logistic_loss_and_gradient(w, b, Xs, y)
        w = soft_threshold(w - step * grad_w, step * lam * alpha) / (1.0 + step * lam * (1.0 - alpha))
        b = b - step * grad_b
        objective = elastic_net_objective(w, b, Xs, y, lam, alpha)
        if not np.isfinite(objective):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        trace.append(objective)

    logger.debug("Logistic fit: step %.4g, final objective %.6g", step, trace[-1])
    return LogisticModel(
        spec,
        Xs.shape[1],
        scaler=scaler,
        metadata={"seed": spec.seed, "epochs": params["epochs"], "step": step, "loss_trace": trace},
        coef=w,
        intercept=b,
    )


def logistic_model_from_coefficients(
    coef: np.ndarray, intercept: float, scaler: Scaler | None = None
) -> LogisticModel:
    """Build a LogisticModel from given weights (standardized space if a scaler is given)."""
    coef = np.asarray(coef, dtype=float)
    return LogisticModel(ModelSpec.create(ModelFamily.LR), coef.shape[0], scaler, coef=coef, intercept=intercept)
