# app/learners/scaler.py

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from app.exception import InvalidInputError


@dataclass(frozen=True)
class Scaler:
    """
    Per-feature standardisation fitted on training rows.

    Attributes:
        mean (np.ndarray): Column means (0 for constant columns).
        scale (np.ndarray): Column population standard deviations (1 for constant columns).
    """

    mean: np.ndarray
    scale: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Standardise rows; constant training columns pass through unchanged."""
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.mean.shape[0]:
            raise InvalidInputError(
                f"Scaler expects {self.mean.shape[0]} features, got {X.shape[-1]}."
            )
        return (X - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Scaler":
        return cls(
            mean=np.asarray(data["mean"], dtype=float),
            scale=np.asarray(data["scale"], dtype=float),
        )


def fit_scaler(X_train: np.ndarray) -> Scaler:
    """
    Fit a Scaler on training rows.

    Args:
        X_train (np.ndarray): (n, d) training rows, n >= 1.

    Returns:
        Scaler: The fitted scaler.

    Raises:
        InvalidInputError: If X_train is empty.
    """
    X_train = np.asarray(X_train, dtype=float)
    if X_train.ndim != 2 or X_train.shape[0] == 0:
        raise InvalidInputError("Cannot fit a scaler on an empty matrix.")
    mean = X_train.mean(axis=0)
    std = X_train.std(axis=0)
    constant = std == 0.0
    return Scaler(mean=np.where(constant, 0.0, mean), scale=np.where(constant, 1.0, std))


def apply_scaler(scaler: Scaler, X: np.ndarray) -> np.ndarray:
    """Apply a fitted scaler to rows."""
    return scaler.transform(X)
