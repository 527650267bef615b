# app/services/screening_service.py

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from app.exception import (
    EmptyFrontError,
    GridFailedError,
    InvalidInputError,
    NotFoundError,
    PatentValuationError,
)
from app.learners import ModelFamily, ModelSpec, TrainedModel, save_model, train_model
from app.services.evaluation_service import (
    METRIC_NAMES,
    CVResult,
    bins_frame,
    cross_validate,
    max_calibration_error,
    ece,
)
from app.services.indicator_service import FeatureMatrix
from app.services.resampling_service import stratified_kfold, undersample
from app.utility import derive_seed, read_json

if TYPE_CHECKING:
    from app.valuation_manager import ValuationManager

logger = logging.getLogger(__name__)

DEFAULT_F1_FLOOR = 0.9
OBJECTIVES = {"ece": "minimize", "mcc": "maximize"}


class SelectionPolicy(Enum):
    """
    Enum representing how one model is picked from the Pareto front.

    Attributes:
        MIN_ECE: Lowest ECE (ties: higher MCC).
        MAX_MCC: Highest MCC (ties: lower ECE).
        KNEE: Highest min-max normalised (1 - ECE) + MCC.
    """

    MIN_ECE = "min_ece"
    MAX_MCC = "max_mcc"
    KNEE = "knee"


def validate_policy(policy_input: str | SelectionPolicy) -> SelectionPolicy:
    """
    Validate and convert a policy string to SelectionPolicy.

    Raises:
        InvalidInputError: If the policy is unknown.
    """
    if isinstance(policy_input, SelectionPolicy):
        return policy_input
    try:
        return SelectionPolicy(str(policy_input).strip().lower())
    except ValueError:
        raise InvalidInputError(f"'{policy_input}' is not a selection policy.")


# (hyperparameters per variant) mirroring four variants per family
_DEFAULT_VARIANTS: dict[ModelFamily, list[dict]] = {
    ModelFamily.RF: [
        {"n_trees": 50, "max_depth": 20},
        {"n_trees": 50, "max_depth": 15},
        {"n_trees": 40, "max_depth": 10},
        {"n_trees": 20, "max_depth": 10},
    ],
    ModelFamily.LR: [
        {"alpha": 0.0, "lambda": 0.0081, "epochs": 36, "learning_rate": 1.0},
        {"alpha": 0.0, "lambda": 0.0081, "epochs": 36, "learning_rate": 0.5},
        {"alpha": 0.5, "lambda": 0.0062, "epochs": 32, "learning_rate": 1.0},
        {"alpha": 0.5, "lambda": 0.0047, "epochs": 33, "learning_rate": 1.0},
    ],
    ModelFamily.NN: [
        {"hidden_nodes": 100, "dropout": 0.1, "epochs": 50},
        {"hidden_nodes": 100, "dropout": 0.0, "epochs": 50},
        {"hidden_nodes": 50, "dropout": 0.4, "epochs": 50},
        {"hidden_nodes": 100, "dropout": 0.4, "epochs": 50},
    ],
    ModelFamily.XGB: [
        {"n_estimators": 75, "max_depth": 6},
        {"n_estimators": 61, "max_depth": 6},
        {"n_estimators": 61, "max_depth": 5},
        {"n_estimators": 54, "max_depth": 6},
    ],
}


def default_grid(seed: int) -> list[ModelSpec]:
    """
    Return the named 16-spec default grid ("RF #1" ... "XGB #4").

    Args:
        seed (int): Run seed; each spec gets a derived seed.
    """
    grid = []
    for family, variants in _DEFAULT_VARIANTS.items():
        for number, hyperparameters in enumerate(variants, 1):
            name = f"{family.value} #{number}"
            grid.append(ModelSpec.create(family, hyperparameters, derive_seed(seed, "grid", name), name))
    return grid


@dataclass
class CandidateResult:
    """
    One grid entry with its cross-validated scores.

    Attributes:
        spec (ModelSpec): The evaluated spec.
        cv (CVResult | None): Full CV result (None when loaded from disk or failed).
        metrics (dict): CV mean of every metric.
        error (str | None): Failure message of a failed entry.
    """

    spec: ModelSpec
    cv: CVResult | None = None
    metrics: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    @classmethod
    def from_cv(cls, cv: CVResult) -> "CandidateResult":
        return cls(spec=cv.spec, cv=cv, metrics=cv.summary())

    @property
    def failed(self) -> bool:
        return self.error is not None

    @property
    def f1(self) -> float:
        return self.metrics["f1"]

    @property
    def mcc(self) -> float:
        return self.metrics["mcc"]

    @property
    def ece(self) -> float:
        return self.metrics["ece"]

    @property
    def summary(self) -> tuple[float, float, float]:
        """(f1, mcc, ece) CV means."""
        return self.f1, self.mcc, self.ece

    def to_dict(self) -> dict:
        data = {"spec": self.spec.to_dict(), "metrics": dict(self.metrics), "error": self.error}
        if self.cv is not None:
            data["cv"] = self.cv.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "CandidateResult":
        return cls(
            spec=ModelSpec.from_dict(data["spec"], validate=not data.get("error")),
            metrics={k: float(v) for k, v in (data.get("metrics") or {}).items()},
            error=data.get("error"),
        )


def run_grid(
    grid: list[ModelSpec],
    matrix: FeatureMatrix,
    k: int,
    seed: int,
    resample: bool = True,
    m_bins: int = 10,
) -> list[CandidateResult]:
    """
    Cross-validate every spec of a grid on shared folds.

    A failing spec is recorded as a failed CandidateResult and the grid goes on.

    Args:
        grid (list[ModelSpec]): Specs in display order.
        matrix (FeatureMatrix): Labelled rows.
        k (int): Number of folds.
        seed (int): Fold seed shared by all specs.
        resample (bool): Tomek-undersample training splits.
        m_bins (int): ECE bin count.

    Returns:
        list[CandidateResult]: One result per spec, in grid order.

    Raises:
        InvalidInputError: If the grid is empty.
        ResamplingError: If the folds cannot be formed (e.g. k too large).
        GridFailedError: If every spec failed.
    """
    if not grid:
        raise InvalidInputError("The model grid is empty.")
    # fold preconditions are shared by every spec, so fail fast on them
    stratified_kfold(matrix.labels, k, derive_seed(seed, "folds"))

    results = []
    for spec in grid:
        try:
            cv = cross_validate(spec, matrix, k, seed, resample, m_bins)
        except PatentValuationError as e:
            logger.warning("Grid entry %s failed: %s", spec.name, e)
            results.append(CandidateResult(spec=spec, error=str(e)))
            continue
        result = CandidateResult.from_cv(cv)
        logger.info(
            "%s: f1=%.4f mcc=%.4f ece=%.4f", spec.name, result.f1, result.mcc, result.ece
        )
        results.append(result)

    if all(r.failed for r in results):
        raise GridFailedError(f"All {len(results)} grid entries failed; first: {results[0].error}")
    return results


def candidates_table(candidates: list[CandidateResult]) -> pd.DataFrame:
    """
    Build the per-candidate metrics table.

    Returns:
        pd.DataFrame: name, family, hyperparameters, the seven CV means, status.
    """
    rows = []
    for c in candidates:
        row = {
            "name": c.spec.name,
            "family": c.spec.family.value,
            "hyperparameters": json.dumps(c.spec.hyperparameters, sort_keys=True),
        }
        row.update({m: (np.nan if c.failed else c.metrics[m]) for m in METRIC_NAMES})
        row["status"] = f"failed: {c.error}" if c.failed else "ok"
        rows.append(row)
    return pd.DataFrame(rows, columns=["name", "family", "hyperparameters", *METRIC_NAMES, "status"])


def dominates(a: CandidateResult, b: CandidateResult) -> bool:
    """True if a is at least as good as b on ECE and MCC and strictly better on one."""
    return a.ece <= b.ece and a.mcc >= b.mcc and (a.ece < b.ece or a.mcc > b.mcc)


def non_dominated_mask(ece_values: np.ndarray, mcc_values: np.ndarray) -> np.ndarray:
    """Return True for every point no other point dominates (min ECE, max MCC)."""
    e = np.asarray(ece_values, dtype=float)
    m = np.asarray(mcc_values, dtype=float)
    no_worse = (e[:, None] <= e[None, :]) & (m[:, None] >= m[None, :])
    better = (e[:, None] < e[None, :]) | (m[:, None] > m[None, :])
    return ~np.any(no_worse & better, axis=0)


@dataclass
class ParetoFront:
    """
    Non-dominated candidates under (minimise ECE, maximise MCC) above an F1 floor.

    Attributes:
        candidates (list[CandidateResult]): Every candidate considered.
        members (list[int]): Front members, ordered by (ece asc, mcc desc).
        non_dominated (list[int]): Unconstrained front: candidates no successful candidate dominates, floor ignored.
        f1_floor (float): Minimum F1 of a member.
    """

    candidates: list[CandidateResult]
    members: list[int]
    non_dominated: list[int]
    f1_floor: float
    objectives: dict[str, str] = field(default_factory=lambda: dict(OBJECTIVES))

    def __len__(self) -> int:
        return len(self.members)

    def member_results(self) -> list[CandidateResult]:
        return [self.candidates[i] for i in self.members]

    def to_frame(self) -> pd.DataFrame:
        """Return one row per candidate with an on_front flag."""
        on_front = set(self.members)
        return pd.DataFrame(
            [
                {
                    "name": c.spec.name,
                    "family": c.spec.family.value,
                    "f1": np.nan if c.failed else c.f1,
                    "mcc": np.nan if c.failed else c.mcc,
                    "ece": np.nan if c.failed else c.ece,
                    "on_front": i in on_front,
                }
                for i, c in enumerate(self.candidates)
            ],
            columns=["name", "family", "f1", "mcc", "ece", "on_front"],
        )

    def to_dict(self) -> dict:
        return {
            "objectives": self.objectives,
            "f1_floor": self.f1_floor,
            "members": [self.candidates[i].spec.name for i in self.members],
            "non_dominated": [self.candidates[i].spec.name for i in self.non_dominated],
            "candidates": [
                {"name": c.spec.name, "f1": c.f1, "mcc": c.mcc, "ece": c.ece}
                for c in self.candidates
                if not c.failed
            ],
        }


def pareto_front(candidates: list[CandidateResult], f1_floor: float = DEFAULT_F1_FLOOR) -> ParetoFront:
    """
    Compute the Pareto front of the successful candidates.

    Candidates below the F1 floor are infeasible and take no part in
    dominance: the front is the non-dominated set of the feasible ones.
    `non_dominated` keeps the unconstrained front of every successful
    candidate for plotting.

    Args:
        candidates (list[CandidateResult]): Grid results (failed ones ignored).
        f1_floor (float): Minimum cross-validated F1.

    Returns:
        ParetoFront: Empty only when every candidate is below the floor (a warning is logged).

    Raises:
        InvalidInputError: If there is no successful candidate.
    """
    usable = [i for i, c in enumerate(candidates) if not c.failed]
    if not usable:
        raise InvalidInputError("Pareto screening needs at least one successful candidate.")

    non_dominated = _front_of(candidates, usable)
    feasible = [i for i in usable if candidates[i].f1 >= f1_floor]
    members = _front_of(candidates, feasible)
    members.sort(key=lambda i: (candidates[i].ece, -candidates[i].mcc, i))

    if not members:
        logger.warning("Pareto front is empty: no candidate reaches F1 %.3f", f1_floor)
    else:
        logger.info(
            "Pareto front holds %d of %d candidates (%d above the F1 floor)",
            len(members),
            len(candidates),
            len(feasible),
        )
    return ParetoFront(candidates, members, non_dominated, f1_floor)


def _front_of(candidates: list[CandidateResult], indices: list[int]) -> list[int]:
    if not indices:
        return []
    e = np.array([candidates[i].ece for i in indices])
    m = np.array([candidates[i].mcc for i in indices])
    return [i for i, keep in zip(indices, non_dominated_mask(e, m)) if keep]


def select_best(front: ParetoFront, policy: str | SelectionPolicy = SelectionPolicy.KNEE) -> CandidateResult:
    """
    Pick one front member.

    Args:
        front (ParetoFront): A nonempty front.
        policy (SelectionPolicy): min_ece, max_mcc or knee.

    Returns:
        CandidateResult: The selected candidate.

    Raises:
        EmptyFrontError: If the front is empty.
    """
    policy = validate_policy(policy)
    if not front.members:
        raise EmptyFrontError(f"Pareto front is empty at F1 floor {front.f1_floor}.")
    results = front.member_results()

    if policy == SelectionPolicy.MIN_ECE:
        position = min(range(len(results)), key=lambda j: (results[j].ece, -results[j].mcc, j))
    elif policy == SelectionPolicy.MAX_MCC:
        position = min(range(len(results)), key=lambda j: (-results[j].mcc, results[j].ece, j))
    else:
        e = np.array([r.ece for r in results])
        m = np.array([r.mcc for r in results])
        scores = (1.0 - _min_max(e)) + _min_max(m)
        position = int(np.argmax(scores))
    return results[position]


def _min_max(values: np.ndarray) -> np.ndarray:
    span = values.max() - values.min()
    if span == 0:
        return np.zeros_like(values)
    return (values - values.min()) / span


def candidate_file_name(name: str) -> str:
    """File-system safe form of a candidate name ("RF #1" -> "RF_1")."""
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_")


def refit_rows(matrix: FeatureMatrix, resample: bool) -> np.ndarray:
    """Return the rows the selected model is refitted on (Tomek survivors if resampling)."""
    rows = np.arange(len(matrix))
    if resample:
        _, _, report = undersample(matrix.rows, matrix.labels)
        rows = np.delete(rows, report.removed)
    return rows


class ScreeningService:
    """
    Service class responsible for the grid evaluation and Pareto selection stages.
    """

    def __init__(self, manager: ValuationManager) -> None:
        """
        Initialize ScreeningService with a ValuationManager instance.

        Args:
            manager (ValuationManager): The parent manager holding the run configuration.
        """
        self.manager = manager
        self.config = manager.config

    def grid(self) -> list[ModelSpec]:
        """Return the configured grid (named default or explicit list)."""
        training = self.config.training
        if training.models is None:
            return default_grid(self.config.seed)
        return list(training.models)

    def train_eval(self, matrix: FeatureMatrix) -> list[CandidateResult]:
        """Run the configured grid on the feature matrix."""
        training = self.config.training
        results = run_grid(
            self.grid(),
            matrix,
            training.k,
            derive_seed(self.config.seed, "train_eval"),
            training.resample,
            training.ece_bins,
        )
        for result in results:
            if result.failed:
                self.manager.warn(f"grid entry {result.spec.name} failed: {result.error}")
        return results

    def emit_candidates(self, candidates: list[CandidateResult], matrix: FeatureMatrix) -> list[Path]:
        """
        Write the candidate table, CV details and per-candidate reliability bins.

        Returns:
            list[Path]: Files written.
        """
        stage_dir = self.manager.stage_dir("train_eval")
        written = [self.manager.write_frame(stage_dir / "candidates.csv", candidates_table(candidates))]
        written.append(
            self.manager.write_json(stage_dir / "candidates.json", [c.to_dict() for c in candidates])
        )
        for candidate in candidates:
            if candidate.cv is None:
                continue
            bins = candidate.cv.oof_bins(matrix.labels)
            frame = bins_frame(bins)
            frame["ece"] = ece(bins)
            frame["mce"] = max_calibration_error(bins)
            path = stage_dir / "reliability" / f"{candidate_file_name(candidate.spec.name)}.csv"
            written.append(self.manager.write_frame(path, frame))
        return written

    def load_candidates(self) -> list[CandidateResult]:
        """
        Read the candidates written by the train-eval stage.

        Raises:
            NotFoundError: If train-eval has not run.
        """
        path = self.manager.stage_dir("train_eval", create=False) / "candidates.json"
        return [CandidateResult.from_dict(c) for c in read_json(path)]

    def screen(self, candidates: list[CandidateResult]) -> tuple[ParetoFront, CandidateResult]:
        """
        Compute the front and select a model under the configured policy.

        Raises:
            EmptyFrontError: If no candidate reaches the F1 floor.
        """
        screening = self.config.screening
        front = pareto_front(candidates, screening.f1_floor)
        if not front.members:
            self.manager.warn(f"Pareto front is empty at F1 floor {screening.f1_floor}")
        return front, select_best(front, screening.selection_policy)

    def refit(self, selected: CandidateResult, matrix: FeatureMatrix) -> tuple[TrainedModel, np.ndarray]:
        """Retrain the selected spec on the full (undersampled) matrix."""
        rows = refit_rows(matrix, self.config.training.resample)
        spec = selected.spec.with_seed(derive_seed(selected.spec.seed, "refit"))
        model = train_model(spec, matrix.rows[rows], matrix.labels[rows])
        return model, rows

    def emit_selection(
        self,
        front: ParetoFront,
        selected: CandidateResult,
        model: TrainedModel,
        training_ids: list[str],
    ) -> list[Path]:
        """Write the front (JSON, CSV), the selection record and the serialized model."""
        stage_dir = self.manager.stage_dir("pareto")
        written = [
            self.manager.write_json(stage_dir / "front.json", front.to_dict()),
            self.manager.write_frame(stage_dir / "front.csv", front.to_frame()),
            self.manager.write_json(
                stage_dir / "selection.json",
                {
                    "policy": self.config.screening.selection_policy.value,
                    "selected": selected.spec.name,
                    "metrics": selected.metrics,
                    "refit": "full matrix"
                    + (" after Tomek undersampling" if self.config.training.resample else ""),
                    "training_patent_ids": training_ids,
                },
            ),
            save_model(model, stage_dir / "selected_model.json"),
        ]
        return written

    def selected_model_path(self) -> Path:
        return self.manager.stage_dir("pareto", create=False) / "selected_model.json"

    def load_selection(self) -> dict:
        """
        Read the selection record of the pareto stage.

        Raises:
            NotFoundError: If pareto has not run.
        """
        path = self.manager.stage_dir("pareto", create=False) / "selection.json"
        if not path.exists():
            raise NotFoundError(f"Stage output '{path}' is missing; run pareto first.")
        return read_json(path)

