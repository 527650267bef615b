# app/learners/base.py

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from app.exception import InvalidInputError, ModelConfigError
from app.learners.scaler import Scaler

DECISION_THRESHOLD = 0.5


class ModelFamily(Enum):
    """
    Enum representing the classifier families.

    Attributes:
        LR: Elastic-net logistic regression.
        RF: Random forest of CART trees.
        NN: One-hidden-layer perceptron.
        XGB: Gradient-boosted regression trees on logistic loss.
    """

    LR = "LR"
    RF = "RF"
    NN = "NN"
    XGB = "XGB"


# name -> (default, validator message, predicate)
HYPERPARAMETERS: dict[ModelFamily, dict[str, tuple[Any, str, Any]]] = {
    ModelFamily.LR: {
        "alpha": (0.5, "in [0, 1]", lambda v: 0.0 <= v <= 1.0),
        "lambda": (0.0, ">= 0", lambda v: v >= 0.0),
        "epochs": (100, "an integer >= 1", lambda v: _is_int(v) and v >= 1),
        "learning_rate": (1.0, "> 0", lambda v: v > 0.0),
    },
    ModelFamily.RF: {
        "n_trees": (50, "an integer >= 1", lambda v: _is_int(v) and v >= 1),
        "max_depth": (20, "an integer >= 1", lambda v: _is_int(v) and v >= 1),
        "min_leaf": (1, "an integer >= 1", lambda v: _is_int(v) and v >= 1),
        "features_per_split": (
            "sqrt",
            '"sqrt", "all" or an integer >= 1',
            lambda v: v in ("sqrt", "all") or (_is_int(v) and v >= 1),
        ),
        "bootstrap": (True, "a boolean", lambda v: isinstance(v, bool)),
    },
    ModelFamily.XGB: {
        "n_estimators": (90, "an integer >= 1", lambda v: _is_int(v) and v >= 1),
        "max_depth": (6, "an integer >= 0", lambda v: _is_int(v) and v >= 0),
        "learning_rate": (0.3, "> 0", lambda v: v > 0.0),
        "reg_alpha": (0.0, ">= 0", lambda v: v >= 0.0),
        "reg_lambda": (1.0, ">= 0", lambda v: v >= 0.0),
        "gamma": (0.0, ">= 0", lambda v: v >= 0.0),
        "min_child_weight": (1.0, ">= 0", lambda v: v >= 0.0),
    },
    ModelFamily.NN: {
        "hidden_nodes": (100, "an integer >= 1", lambda v: _is_int(v) and v >= 1),
        "dropout": (0.0, "in [0, 1)", lambda v: 0.0 <= v < 1.0),
        "epochs": (100, "an integer >= 1", lambda v: _is_int(v) and v >= 1),
        "learning_rate": (0.005, "> 0", lambda v: v > 0.0),
        "batch_size": (32, "an integer >= 1", lambda v: _is_int(v) and v >= 1),
    },
}


def _is_int(value: Any) -> bool:
    return isinstance(value, (int, np.integer)) and not isinstance(value, bool)


def validate_family(family_input: str | ModelFamily) -> ModelFamily:
    """
    Validate and convert a family string to ModelFamily.

    Raises:
        ModelConfigError: If the family is unknown.
    """
    if isinstance(family_input, ModelFamily):
        return family_input
    try:
        return ModelFamily(str(family_input).strip().upper())
    except ValueError:
        raise ModelConfigError(f"'{family_input}' is not a model family (LR, RF, NN, XGB).")


def resolve_hyperparameters(family: ModelFamily, given: dict[str, Any]) -> dict[str, Any]:
    """
    Fill defaults and validate the hyperparameters of a family.

    Args:
        family (ModelFamily): Model family.
        given (dict): User supplied values.

    Returns:
        dict: Complete, validated hyperparameters.

    Raises:
        ModelConfigError: On an unknown name or an out-of-range value.
    """
    known = HYPERPARAMETERS[family]
    unknown = sorted(set(given) - set(known))
    if unknown:
        raise ModelConfigError(f"Unknown {family.value} hyperparameters: {', '.join(unknown)}.")

    resolved = {}
    for name, (default, expected, check) in known.items():
        value = given.get(name, default)
        try:
            ok = bool(check(value))
        except TypeError:
            ok = False
        if not ok or (isinstance(value, bool) and not isinstance(default, bool)):
            raise ModelConfigError(f"{family.value} {name} must be {expected}, got {value!r}.")
        resolved[name] = value
    return resolved


@dataclass(frozen=True)
class ModelSpec:
    """
    A model family with its hyperparameters and seed.

    Attributes:
        family (ModelFamily): Model family.
        hyperparameters (dict): Complete hyperparameters (defaults filled in).
        seed (int): Seed of every random draw made while training.
        name (str): Display name, e.g. "RF #1".
    """

    family: ModelFamily
    hyperparameters: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    name: str = ""

    @classmethod
    def create(
        cls,
        family: str | ModelFamily,
        hyperparameters: dict[str, Any] | None = None,
        seed: int = 0,
        name: str = "",
    ) -> "ModelSpec":
        """
        Build a validated ModelSpec.

        Raises:
            ModelConfigError: If the family or a hyperparameter is invalid.
        """
        family = validate_family(family)
        resolved = resolve_hyperparameters(family, dict(hyperparameters or {}))
        return cls(family=family, hyperparameters=resolved, seed=int(seed), name=name or family.value)

    def with_seed(self, seed: int) -> "ModelSpec":
        """Return a copy of the spec with another seed."""
        return ModelSpec(self.family, dict(self.hyperparameters), int(seed), self.name)

    def to_dict(self) -> dict:
        """Return a dictionary representation of the spec."""
        return {
            "family": self.family.value,
            "hyperparameters": dict(self.hyperparameters),
            "seed": self.seed,
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, data: dict, validate: bool = True) -> "ModelSpec":
        """Build a ModelSpec from its dictionary form (validate=False keeps a failed spec as recorded)."""
        if not validate:
            return cls(
                validate_family(data.get("family")),
                dict(data.get("hyperparameters") or {}),
                int(data.get("seed", 0)),
                data.get("name", ""),
            )
        return cls.create(
            data.get("family"), data.get("hyperparameters"), data.get("seed", 0), data.get("name", "")
        )


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    exp_z = np.exp(z[~positive])
    out[~positive] = exp_z / (1.0 + exp_z)
    return out


def log_loss(y: np.ndarray, raw: np.ndarray) -> float:
    """Mean logistic loss of raw scores (log-odds)."""
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


def check_training_data(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Validate and convert training data.

    Raises:
        InvalidInputError: On empty or misaligned data or labels outside {0, 1}.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("Training data must be a nonempty 2-D matrix.")
    if y.shape != (X.shape[0],):
        raise InvalidInputError("Training labels are not aligned with the rows.")
    if not np.isin(y, (0.0, 1.0)).all():
        raise InvalidInputError("Training labels must be 0 or 1.")
    if not np.isfinite(X).all():
        raise InvalidInputError("Training data contains non-finite values.")
    return X, y


class TrainedModel(ABC):
    """
    A fitted classifier producing positive-class probabilities.

    Attributes:
        spec (ModelSpec): The spec the model was trained from.
        n_features (int): Training width.
        scaler (Scaler | None): Scaler applied before the model, if any.
        metadata (dict): Training metadata (seed, epochs or trees, loss trace).
    """

    def __init__(
        self,
        spec: ModelSpec,
        n_features: int,
        scaler: Scaler | None = None,
        metadata: dict | None = None,
    ) -> None:
        self.spec = spec
        self.n_features = n_features
        self.scaler = scaler
        self.metadata = metadata or {}

    @property
    def family(self) -> ModelFamily:
        return self.spec.family

    @abstractmethod
    def _predict(self, X: np.ndarray) -> np.ndarray:
        """Return probabilities for already-scaled rows."""

    @abstractmethod
    def params_to_dict(self) -> dict:
        """Return the fitted parameters as JSON-serialisable data."""

    @classmethod
    @abstractmethod
    def params_from_dict(cls, data: dict) -> dict:
        """Return constructor keyword arguments from params_to_dict output."""

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """
        Return the positive-class probability of every row.

        Raises:
            InvalidInputError: If the width differs from the training width.
        """
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features:
            raise InvalidInputError(
                f"Model expects {self.n_features} features, got {X.shape[1]}."
            )
        if self.scaler is not None:
            X = self.scaler.transform(X)
        return np.clip(self._predict(X), 0.0, 1.0)

    def predict(self, X: np.ndarray, threshold: float = DECISION_THRESHOLD) -> np.ndarray:
        """Return 0/1 class predictions (probability >= threshold is VP)."""
        return (self.predict_proba(X) >= threshold).astype(int)
