# app/learners/mlp.py

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
from app.learners.scaler import fit_scaler

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
PARAM_NAMES = ("W1", "b1", "w2", "b2")


def _forward(params: dict[str, np.ndarray], X: np.ndarray):
    pre = X @ params["W1"] + params["b1"]
    hidden = np.maximum(pre, 0.0)
    raw = hidden @ params["w2"] + params["b2"]
    return pre, hidden, raw


def mlp_loss_and_gradients(
    params: dict[str, np.ndarray], X: np.ndarray, y: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """
    Mean logistic loss of the network on X and its gradients (no dropout).

    Args:
        params (dict): W1 (d, h), b1 (h,), w2 (h,), b2 (scalar array).
        X (np.ndarray): (n, d) inputs, already scaled and masked.
        y (np.ndarray): 0/1 labels.

    Returns:
        tuple: (loss, gradients keyed like params)
    """
    pre, hidden, raw = _forward(params, X)
    d_raw = (sigmoid(raw) - y) / X.shape[0]
    d_hidden = np.outer(d_raw, params["w2"]) * (pre > 0.0)
    grads = {
        "W1": X.T @ d_hidden,
        "b1": d_hidden.sum(axis=0),
        "w2": hidden.T @ d_raw,
        "b2": np.asarray(d_raw.sum()),
    }
    return log_loss(y, raw), grads


class MlpModel(TrainedModel):
    """
    Input dropout -> ReLU hidden layer -> sigmoid output.

    Dropout is inverted (kept inputs are scaled by 1 / (1 - rate) while
    training), so prediction uses the plain weights.
    """

    def __init__(self, spec, n_features, scaler=None, metadata=None, params=None) -> None:
        super().__init__(spec, n_features, scaler, metadata)
        self.params: dict[str, np.ndarray] = params or {}

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(_forward(self.params, X)[2])

    def params_to_dict(self) -> dict:
        return {name: np.asarray(self.params[name]).tolist() for name in PARAM_NAMES}

    @classmethod
    def params_from_dict(cls, data: dict) -> dict:
        return {"params": {name: np.asarray(data[name], dtype=float) for name in PARAM_NAMES}}


def init_mlp_params(n_inputs: int, hidden_nodes: int, rng: np.random.Generator) -> dict:
    """He-normal hidden weights, scaled-normal output weights, zero biases."""
    return {
        "W1": rng.normal(0.0, np.sqrt(2.0 / n_inputs), size=(n_inputs, hidden_nodes)),
        "b1": np.zeros(hidden_nodes),
        "w2": rng.normal(0.0, np.sqrt(1.0 / hidden_nodes), size=hidden_nodes),
        "b2": np.asarray(0.0),
    }


def train_mlp(X: np.ndarray, y: np.ndarray, spec: ModelSpec) -> MlpModel:
    """
    Train a one-hidden-layer perceptron with Adam on the logistic loss.

    Args:
        X (np.ndarray): (n, d) raw training rows; standardized internally.
        y (np.ndarray): 0/1 labels.
        spec (ModelSpec): NN spec (hidden_nodes, dropout, epochs,
            learning_rate, batch_size).

    Returns:
        MlpModel: The fitted network with its scaler.

    Raises:
        ModelConfigError: If dropout is outside [0, 1).
        TrainingError: If the loss becomes non-finite.
    """
    hp = resolve_hyperparameters(ModelFamily.NN, spec.hyperparameters)
    X, y = check_training_data(X, y)
    scaler = fit_scaler(X)
    Xs = scaler.transform(X)
    n, d = Xs.shape
    rng = np.random.default_rng(spec.seed)

    params = init_mlp_params(d, hp["hidden_nodes"], rng)
    first = {k: np.zeros_like(v) for k, v in params.items()}
    second = {k: np.zeros_like(v) for k, v in params.items()}
    keep = 1.0 - hp["dropout"]
    lr, batch_size = hp["learning_rate"], hp["batch_size"]
    t = 0
    trace = []

    for epoch in range(1, hp["epochs"] + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            inputs = Xs[batch]
            if hp["dropout"] > 0.0:
                inputs = inputs * (rng.random(inputs.shape) < keep) / keep
            _, grads = mlp_loss_and_gradients(params, inputs, y[batch])
            t += 1
            for name in PARAM_NAMES:
                first[name] = ADAM_BETA1 * first[name] + (1 - ADAM_BETA1) * grads[name]
                second[name] = ADAM_BETA2 * second[name] + (1 - ADAM_BETA2) * grads[name] ** 2
                m_hat = first[name] / (1 - ADAM_BETA1**t)
                v_hat = second[name] / (1 - ADAM_BETA2**t)
                params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        loss = log_loss(y, _forward(params, Xs)[2])
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch}")
        trace.append(loss)

    logger.debug("MLP fit: %d epochs, final loss %.6g", hp["epochs"], trace[-1])
    return MlpModel(
        spec,
        d,
        scaler=scaler,
        metadata={"seed": spec.seed, "epochs": hp["epochs"], "loss_trace": trace},
        params=params,
    )
