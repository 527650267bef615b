# app/learners/__init__.py

from __future__ import annotations

from pathlib import Path

import numpy as np

from app.exception import InvalidInputError
from app.learners.base import ModelFamily, ModelSpec, TrainedModel
from app.learners.boosting import BoostingModel, train_gradient_boosting
from app.learners.forest import ForestModel, train_random_forest
from app.learners.logistic import LogisticModel, train_logistic_elastic_net
from app.learners.mlp import MlpModel, train_mlp
from app.learners.scaler import Scaler
from app.utility import read_json, write_json

TRAINERS = {
    ModelFamily.LR: train_logistic_elastic_net,
    ModelFamily.RF: train_random_forest,
    ModelFamily.NN: train_mlp,
    ModelFamily.XGB: train_gradient_boosting,
}

MODEL_CLASSES: dict[ModelFamily, type[TrainedModel]] = {
    ModelFamily.LR: LogisticModel,
    ModelFamily.RF: ForestModel,
    ModelFamily.NN: MlpModel,
    ModelFamily.XGB: BoostingModel,
}


def train_model(spec: ModelSpec, X: np.ndarray, y: np.ndarray) -> TrainedModel:
    """Train the model family named by spec on (X, y)."""
    return TRAINERS[spec.family](X, y, spec)


def predict_proba(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """Return the positive-class probabilities of a trained model."""
    return model.predict_proba(X)


def dump_model(model: TrainedModel) -> dict:
    """
    Return the self-describing JSON form of a trained model.

    Returns:
        dict: family, spec, n_features, scaler, params and metadata.
    """
    return {
        "family": model.family.value,
        "spec": model.spec.to_dict(),
        "n_features": model.n_features,
        "scaler": model.scaler.to_dict() if model.scaler is not None else None,
        "params": model.params_to_dict(),
        "metadata": model.metadata,
    }


def load_model(data: dict) -> TrainedModel:
    """
    Rebuild a trained model from dump_model output.

    Raises:
        InvalidInputError: If the document is not a serialized model.
    """
    try:
        spec = ModelSpec.from_dict(data["spec"])
        cls = MODEL_CLASSES[spec.family]
        scaler = Scaler.from_dict(data["scaler"]) if data.get("scaler") else None
        return cls(
            spec=spec,
            n_features=int(data["n_features"]),
            scaler=scaler,
            metadata=data.get("metadata") or {},
            **cls.params_from_dict(data["params"]),
        )
    except (KeyError, TypeError) as e:
        raise InvalidInputError(f"Not a serialized model: missing {e}.")


def save_model(model: TrainedModel, path: str | Path) -> Path:
    """Write a trained model as canonical JSON."""
    return write_json(path, dump_model(model))


def read_model(path: str | Path) -> TrainedModel:
    """Read a trained model written by save_model."""
    return load_model(read_json(path))


__all__ = [
    "ModelFamily",
    "ModelSpec",
    "TrainedModel",
    "train_model",
    "predict_proba",
    "dump_model",
    "load_model",
    "save_model",
    "read_model",
]
