# app/services/attribution_service.py

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable

import numpy as np
import pandas as pd

from app.exception import AttributionBudgetError, InvalidInputError, NotFoundError
from app.services.evaluation_service import bin_index
from app.services.indicator_service import FeatureMatrix
from app.utility import derive_seed, read_json, validate_positive_int

if TYPE_CHECKING:
    from app.learners import TrainedModel
    from app.valuation_manager import ValuationManager

logger = logging.getLogger(__name__)

DEFAULT_MAX_FEATURES = 20
DEFAULT_N_PERMUTATIONS = 25
DEFAULT_BACKGROUND_SIZE = 100
DEFAULT_MAX_INSTANCES = 100
DEFAULT_BIN_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
# model rows evaluated per prediction call
EVAL_ROWS = 200_000


class AttributionMode(Enum):
    """
    Enum representing how Shapley values are computed.

    Attributes:
        EXACT: Weighted sum over every feature subset.
        SAMPLED: Monte Carlo average over random feature orderings.
    """

    EXACT = "exact"
    SAMPLED = "sampled"


def validate_mode(mode_input: str | AttributionMode) -> AttributionMode:
    """
    Validate and convert an attribution mode string.

    Raises:
        InvalidInputError: If the mode is unknown.
    """
    if isinstance(mode_input, AttributionMode):
        return mode_input
    try:
        return AttributionMode(str(mode_input).strip().lower())
    except ValueError:
        raise InvalidInputError(f"'{mode_input}' is not an attribution mode (exact, sampled).")


def validate_bin_edges(edges) -> tuple[float, ...]:
    """
    Validate confidence-bin edges: strictly increasing from 0 to 1.

    Raises:
        InvalidInputError: If the edges do not partition [0, 1].
    """
    try:
        values = tuple(float(e) for e in edges)
    except (TypeError, ValueError):
        raise InvalidInputError("Bin edges must be numbers.")
    if len(values) < 2 or values[0] != 0.0 or values[-1] != 1.0:
        raise InvalidInputError("Bin edges must start at 0 and end at 1.")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise InvalidInputError("Bin edges must be strictly increasing.")
    return values


@dataclass(frozen=True)
class AttributionConfig:
    """
    Settings of the explain stage.

    Attributes:
        mode (AttributionMode): Exact or sampled Shapley values.
        max_features (int): Largest feature count exact mode accepts.
        n_permutations (int): Orderings drawn per instance in sampled mode.
        background_size (int): Training rows in the background set.
        max_instances (int): Largest number of explained rows.
        bin_edges (tuple[float, ...]): Confidence-bin edges over [0, 1].
    """

    mode: AttributionMode = AttributionMode.SAMPLED
    max_features: int = DEFAULT_MAX_FEATURES
    n_permutations: int = DEFAULT_N_PERMUTATIONS
    background_size: int = DEFAULT_BACKGROUND_SIZE
    max_instances: int = DEFAULT_MAX_INSTANCES
    bin_edges: tuple[float, ...] = DEFAULT_BIN_EDGES

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", validate_mode(self.mode))
        for name in ("max_features", "n_permutations", "background_size", "max_instances"):
            object.__setattr__(self, name, validate_positive_int(getattr(self, name), name))
        object.__setattr__(self, "bin_edges", validate_bin_edges(self.bin_edges))


@dataclass(frozen=True)
class BackgroundSet:
    """
    Reference rows the interventional expectation is taken over.

    Attributes:
        rows (np.ndarray): (B, M) training rows.
    """

    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise InvalidInputError("A background set needs at least one 2-D row.")
        object.__setattr__(self, "rows", rows)

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def sample(cls, rows: np.ndarray, size: int, seed: int) -> "BackgroundSet":
        """
        Draw a background set uniformly without replacement.

        Args:
            rows (np.ndarray): Candidate (training) rows.
            size (int): Wanted size; all rows are used when there are fewer.
            seed (int): Seed of the draw.

        Returns:
            BackgroundSet: Rows kept in their original order.
        """
        rows = np.asarray(rows, dtype=float)
        size = validate_positive_int(size, "Background size")
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise InvalidInputError("Cannot sample a background set from no rows.")
        if rows.shape[0] <= size:
            return cls(rows.copy())
        picked = np.sort(np.random.default_rng(seed).choice(rows.shape[0], size, replace=False))
        return cls(rows[picked])


@dataclass
class Attribution:
    """
    Shapley attribution of one prediction.

    Attributes:
        patent_id (str): Explained patent.
        base_value (float): Mean model output over the background.
        phi (np.ndarray): One value per feature.
        model_output (float): Model output at the instance.
        values (np.ndarray): The instance's feature values.
        mode (AttributionMode): How phi was computed.
    """

    patent_id: str
    base_value: float
    phi: np.ndarray
    model_output: float
    values: np.ndarray
    mode: AttributionMode = AttributionMode.EXACT

    @property
    def confidence(self) -> float:
        """Predicted VP probability of the instance."""
        return float(np.clip(self.model_output, 0.0, 1.0))

    @property
    def efficiency_gap(self) -> float:
        """|base_value + sum(phi) - model_output|."""
        return abs(self.base_value + float(np.sum(self.phi)) - self.model_output)


def _as_function(model: Any) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(model, "predict_proba"):
        return model.predict_proba
    if callable(model):
        return model
    raise InvalidInputError("Model must be callable or expose predict_proba.")


def _check_instance(x, background: BackgroundSet) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != background.rows.shape[1]:
        raise InvalidInputError(
            f"Instance has {x.shape[0]} features, background has {background.rows.shape[1]}."
        )
    return x


def coalition_values(
    model: Any, x: np.ndarray, background: BackgroundSet, masks: np.ndarray
) -> np.ndarray:
    """
    Interventional value of each coalition: the mean model output over the background
    with the masked features replaced by the instance's values.

    Args:
        model: Callable or object with predict_proba.
        x (np.ndarray): The instance.
        background (BackgroundSet): Reference rows.
        masks (np.ndarray): (S, M) boolean coalition masks.

    Returns:
        np.ndarray: (S,) coalition values.
    """
    f = _as_function(model)
    x = _check_instance(x, background)
    masks = np.asarray(masks, dtype=bool)
    n_rows, width = background.rows.shape
    per_call = max(1, EVAL_ROWS // n_rows)

    out = np.empty(masks.shape[0])
    for start in range(0, masks.shape[0], per_call):
        chunk = masks[start : start + per_call]
        composite = np.where(chunk[:, None, :], x[None, None, :], background.rows[None, :, :])
        preds = np.asarray(f(composite.reshape(-1, width)), dtype=float)
        out[start : start + chunk.shape[0]] = preds.reshape(chunk.shape[0], n_rows).mean(axis=1)
    return out


def _model_output(model: Any, x: np.ndarray) -> float:
    return float(np.asarray(_as_function(model)(x.reshape(1, -1)), dtype=float)[0])


def exact_shapley(
    model: Any,
    x: np.ndarray,
    background: BackgroundSet,
    max_features: int = DEFAULT_MAX_FEATURES,
    patent_id: str = "",
) -> Attribution:
    """
    Compute Shapley values by the weighted sum over all feature subsets.

    Args:
        model: Callable or object with predict_proba.
        x (np.ndarray): The instance (M values).
        background (BackgroundSet): Reference rows (B, M).
        max_features (int): Largest M accepted (cost is 2^M * B model rows).
        patent_id (str): Identifier recorded in the result.

    Returns:
        Attribution: phi with base_value + sum(phi) == model output.

    Raises:
        AttributionBudgetError: If M exceeds max_features.
    """
    x = _check_instance(x, background)
    m = x.shape[0]
    if m > max_features:
        raise AttributionBudgetError(
            f"Exact Shapley values over {m} features exceed max_features={max_features}; "
            "use sampled mode instead."
        )

    codes = np.arange(1 << m)
    masks = ((codes[:, None] >> np.arange(m)) & 1).astype(bool)
    values = coalition_values(model, x, background, masks)
    sizes = masks.sum(axis=1)
    weights = np.array([1.0 / (m * math.comb(m - 1, s)) for s in range(m)])

    phi = np.zeros(m)
    for i in range(m):
        without = np.flatnonzero(~masks[:, i])
        phi[i] = np.dot(weights[sizes[without]], values[without | (1 << i)] - values[without])

    return Attribution(
        patent_id=patent_id,
        base_value=float(values[0]),
        phi=phi,
        model_output=_model_output(model, x),
        values=x,
        mode=AttributionMode.EXACT,
    )


def sampled_shapley(
    model: Any,
    x: np.ndarray,
    background: BackgroundSet,
    n_permutations: int,
    seed: int,
    patent_id: str = "",
) -> Attribution:
    """
    Estimate Shapley values by averaging marginal contributions over random orderings.

    Raises:
        InvalidInputError: If n_permutations < 1.
    """
    n_permutations = validate_positive_int(n_permutations, "n_permutations")
    x = _check_instance(x, background)
    m = x.shape[0]
    rng = np.random.default_rng(seed)
    perms = rng.permuted(np.tile(np.arange(m), (n_permutations, 1)), axis=1)

    # position of every feature in its ordering
    ranks = np.empty_like(perms)
    np.put_along_axis(ranks, perms, np.arange(m)[None, :].repeat(n_permutations, axis=0), axis=1)

    output = _model_output(model, x)
    base = float(coalition_values(model, x, background, np.zeros((1, m), dtype=bool))[0])

    values = np.empty((n_permutations, m + 1))
    values[:, 0] = base
    values[:, m] = output
    if m > 1:
        prefix_sizes = np.arange(1, m)
        masks = ranks[:, None, :] < prefix_sizes[None, :, None]
        inner = coalition_values(model, x, background, masks.reshape(-1, m))
        values[:, 1:m] = inner.reshape(n_permutations, m - 1)

    steps = np.diff(values, axis=1)
    contributions = np.empty((n_permutations, m))
    np.put_along_axis(contributions, perms, steps, axis=1)

    return Attribution(
        patent_id=patent_id,
        base_value=base,
        phi=contributions.mean(axis=0),
        model_output=output,
        values=x,
        mode=AttributionMode.SAMPLED,
    )


def _correlation(values: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Column-wise Pearson correlation; 0 where either column is constant."""
    vc = values - values.mean(axis=0)
    pc = phi - phi.mean(axis=0)
    denom = np.sqrt((vc**2).sum(axis=0) * (pc**2).sum(axis=0))
    numer = (vc * pc).sum(axis=0)
    out = np.zeros(values.shape[1])
    nonzero = denom > 0
    out[nonzero] = numer[nonzero] / denom[nonzero]
    return out


def rank_features(mean_abs_phi: np.ndarray) -> list[int]:
    """Feature indices by mean |phi| descending, ties by index."""
    mean_abs_phi = np.asarray(mean_abs_phi, dtype=float)
    return np.lexsort((np.arange(mean_abs_phi.size), -mean_abs_phi)).tolist()


def _stack(attributions: list[Attribution]) -> tuple[np.ndarray, np.ndarray]:
    phi = np.vstack([a.phi for a in attributions])
    values = np.vstack([a.values for a in attributions])
    return phi, values


def _feature_names(names: list[str] | None, width: int) -> list[str]:
    if names is None:
        return [f"x{i + 1}" for i in range(width)]
    if len(names) != width:
        raise InvalidInputError(f"Expected {width} feature names, got {len(names)}.")
    return list(names)


@dataclass
class BinSummary:
    """
    Feature ranking inside one confidence bin.

    Attributes:
        lower (float): Lower edge.
        upper (float): Upper edge.
        count (int): Attributions in the bin.
        feature_names (list[str]): Column names.
        mean_abs_phi (np.ndarray): Mean |phi| per feature.
        mean_phi (np.ndarray): Mean phi per feature.
        correlation (np.ndarray): Value/phi correlation per feature.
        ranking (list[int]): Feature indices, most important first.
    """

    lower: float
    upper: float
    count: int
    feature_names: list[str]
    mean_abs_phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mean_phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    correlation: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ranking: list[int] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.count == 0

    def ranked_names(self) -> list[str]:
        return [self.feature_names[i] for i in self.ranking]

    def to_dict(self) -> dict:
        """Return the bin as a rank table."""
        return {
            "lower": self.lower,
            "upper": self.upper,
            "count": self.count,
            "empty": self.empty,
            "features": [
                {
                    "rank": rank,
                    "feature": self.feature_names[i],
                    "mean_abs_phi": float(self.mean_abs_phi[i]),
                    "mean_phi": float(self.mean_phi[i]),
                    "correlation": float(self.correlation[i]),
                }
                for rank, i in enumerate(self.ranking, 1)
            ],
        }


def bin_attributions(
    attributions: list[Attribution],
    bin_edges=DEFAULT_BIN_EDGES,
    feature_names: list[str] | None = None,
) -> list[BinSummary]:
    """
    Group attributions by confidence and rank features inside each bin.

    Args:
        attributions (list[Attribution]): Explained instances.
        bin_edges: Edges partitioning [0, 1] (right-closed bins, first bin holds 0).
        feature_names (list[str] | None): Column names (default x1..xM).

    Returns:
        list[BinSummary]: One summary per bin; empty bins carry count 0 and no ranking.
    """
    edges = np.array(validate_bin_edges(bin_edges))
    if not attributions:
        names = list(feature_names or [])
        return [BinSummary(float(lo), float(hi), 0, names) for lo, hi in zip(edges, edges[1:])]

    phi, values = _stack(attributions)
    names = _feature_names(feature_names, phi.shape[1])
    confidence = np.array([a.confidence for a in attributions])
    index = bin_index(confidence, edges)

    summaries = []
    for b, (lo, hi) in enumerate(zip(edges, edges[1:])):
        rows = index == b
        if not rows.any():
            summaries.append(BinSummary(float(lo), float(hi), 0, names))
            continue
        mean_abs = np.abs(phi[rows]).mean(axis=0)
        summaries.append(
            BinSummary(
                lower=float(lo),
                upper=float(hi),
                count=int(rows.sum()),
                feature_names=names,
                mean_abs_phi=mean_abs,
                mean_phi=phi[rows].mean(axis=0),
                correlation=_correlation(values[rows], phi[rows]),
                ranking=rank_features(mean_abs),
            )
        )
    return summaries


@dataclass
class GlobalSummary:
    """
    Corpus-level feature ranking with summary-plot data.

    Attributes:
        feature_names (list[str]): Column names.
        mean_abs_phi (np.ndarray): Mean |phi| per feature.
        mean_phi (np.ndarray): Mean phi per feature.
        correlation (np.ndarray): Value/phi correlation per feature.
        ranking (list[int]): Feature indices, most important first.
        points (pd.DataFrame): patent_id, feature, value, value_percentile, phi.
    """

    feature_names: list[str]
    mean_abs_phi: np.ndarray
    mean_phi: np.ndarray
    correlation: np.ndarray
    ranking: list[int]
    points: pd.DataFrame

    def top(self, n: int) -> list[str]:
        return [self.feature_names[i] for i in self.ranking[:n]]

    def to_dict(self) -> dict:
        return {
            "n_instances": int(self.points["patent_id"].nunique()) if len(self.points) else 0,
            "features": [
                {
                    "rank": rank,
                    "feature": self.feature_names[i],
                    "mean_abs_phi": float(self.mean_abs_phi[i]),
                    "mean_phi": float(self.mean_phi[i]),
                    "correlation": float(self.correlation[i]),
                }
                for rank, i in enumerate(self.ranking, 1)
            ],
        }


def global_summary(
    attributions: list[Attribution], feature_names: list[str] | None = None
) -> GlobalSummary:
    """
    Rank features by global mean |phi| and build the summary-plot triples.

    Raises:
        InvalidInputError: If there are no attributions.
    """
    if not attributions:
        raise InvalidInputError("Cannot summarise an empty attribution set.")
    phi, values = _stack(attributions)
    names = _feature_names(feature_names, phi.shape[1])
    mean_abs = np.abs(phi).mean(axis=0)

    percentiles = pd.DataFrame(values, columns=names).rank(pct=True, method="average")
    ids = [a.patent_id for a in attributions]
    points = pd.DataFrame(
        {
            "patent_id": np.repeat(ids, len(names)),
            "feature": np.tile(names, len(ids)),
            "value": values.ravel(),
            "value_percentile": percentiles.to_numpy().ravel(),
            "phi": phi.ravel(),
        }
    )
    return GlobalSummary(
        feature_names=names,
        mean_abs_phi=mean_abs,
        mean_phi=phi.mean(axis=0),
        correlation=_correlation(values, phi),
        ranking=rank_features(mean_abs),
        points=points,
    )


def select_instances(n_rows: int, max_instances: int, seed: int) -> np.ndarray:
    """Return the rows to explain: all of them, or a sorted uniform subsample."""
    if n_rows <= max_instances:
        return np.arange(n_rows)
    return np.sort(np.random.default_rng(seed).choice(n_rows, max_instances, replace=False))


def explain_instances(
    model: Any,
    matrix: FeatureMatrix,
    background_rows: np.ndarray,
    cfg: AttributionConfig,
    seed: int,
) -> list[Attribution]:
    """
    Explain up to max_instances rows of a matrix with the configured mode.

    Args:
        model: Trained model (or callable) to explain.
        matrix (FeatureMatrix): Rows to explain.
        background_rows (np.ndarray): Training rows the background is drawn from.
        cfg (AttributionConfig): Attribution settings.
        seed (int): Explain-stage seed.

    Returns:
        list[Attribution]: In matrix row order.

    Raises:
        AttributionBudgetError: If exact mode is asked for more than max_features features.
    """
    width = len(matrix.feature_names)
    if cfg.mode == AttributionMode.EXACT and width > cfg.max_features:
        raise AttributionBudgetError(
            f"Exact Shapley values over {width} features exceed max_features={cfg.max_features}; "
            "set attribution.mode = \"sampled\"."
        )
    background = BackgroundSet.sample(
        background_rows, cfg.background_size, derive_seed(seed, "background")
    )
    rows = select_instances(len(matrix), cfg.max_instances, derive_seed(seed, "instances"))
    logger.info(
        "Explaining %d of %d rows (%s mode, background %d)",
        len(rows), len(matrix), cfg.mode.value, background.size,
    )

    attributions = []
    for r in rows:
        patent_id = matrix.patent_ids[r]
        if cfg.mode == AttributionMode.EXACT:
            attribution = exact_shapley(model, matrix.rows[r], background, cfg.max_features, patent_id)
        else:
            attribution = sampled_shapley(
                model,
                matrix.rows[r],
                background,
                cfg.n_permutations,
                derive_seed(seed, "instance", patent_id),
                patent_id,
            )
        logger.debug("Explained %s (output %.4f)", patent_id, attribution.model_output)
        attributions.append(attribution)
    return attributions


def attributions_frame(attributions: list[Attribution], feature_names: list[str]) -> pd.DataFrame:
    """One row per instance: patent_id, confidence, base_value, model_output, phi_<feature>..."""
    frame = pd.DataFrame(
        {
            "patent_id": [a.patent_id for a in attributions],
            "confidence": [a.confidence for a in attributions],
            "base_value": [a.base_value for a in attributions],
            "model_output": [a.model_output for a in attributions],
        }
    )
    phi = (
        np.vstack([a.phi for a in attributions])
        if attributions
        else np.empty((0, len(feature_names)))
    )
    phi_frame = pd.DataFrame(phi, columns=[f"phi_{name}" for name in feature_names])
    return pd.concat([frame, phi_frame], axis=1)


class AttributionService:
    """
    Service class responsible for the explain stage.
    """

    def __init__(self, manager: ValuationManager) -> None:
        """
        Initialize AttributionService with a ValuationManager instance.

        Args:
            manager (ValuationManager): The parent manager holding the run configuration.
        """
        self.manager = manager
        self.config = manager.config

    def background_rows(self, matrix: FeatureMatrix, training_ids: list[str]) -> np.ndarray:
        """
        Return the matrix rows the selected model was refitted on.

        Raises:
            NotFoundError: If a recorded training patent is not in the matrix.
        """
        position = {pid: i for i, pid in enumerate(matrix.patent_ids)}
        missing = [pid for pid in training_ids if pid not in position]
        if missing:
            raise NotFoundError(f"Training patent '{missing[0]}' is not in the feature matrix.")
        return matrix.rows[[position[pid] for pid in training_ids]]

    def explain(
        self, model: TrainedModel, matrix: FeatureMatrix, training_ids: list[str]
    ) -> tuple[list[Attribution], GlobalSummary, list[BinSummary]]:
        """Explain the matrix with the selected model and summarise the result."""
        cfg = self.config.attribution
        attributions = explain_instances(
            model,
            matrix,
            self.background_rows(matrix, training_ids),
            cfg,
            derive_seed(self.config.seed, "explain"),
        )
        summary = global_summary(attributions, matrix.feature_names)
        bins = bin_attributions(attributions, cfg.bin_edges, matrix.feature_names)
        for number, summary_bin in enumerate(bins, 1):
            if summary_bin.empty:
                logger.info("Confidence bin %d (%.1f-%.1f) is empty", number, summary_bin.lower, summary_bin.upper)
        return attributions, summary, bins

    def emit(
        self,
        attributions: list[Attribution],
        summary: GlobalSummary,
        bins: list[BinSummary],
        feature_names: list[str],
    ) -> list[Path]:
        """
        Write per-instance attributions, the global summary and one JSON per confidence bin.

        Returns:
            list[Path]: Files written.
        """
        stage_dir = self.manager.stage_dir("explain")
        written = [
            self.manager.write_frame(
                stage_dir / "attributions.csv", attributions_frame(attributions, feature_names)
            ),
            self.manager.write_json(stage_dir / "global_summary.json", summary.to_dict()),
            self.manager.write_frame(stage_dir / "summary_points.csv", summary.points),
        ]
        for number, summary_bin in enumerate(bins, 1):
            written.append(
                self.manager.write_json(stage_dir / "bins" / f"bin_{number}.json", summary_bin.to_dict())
            )
        return written

    def load_global_summary(self) -> dict:
        """
        Read the global summary of the explain stage.

        Raises:
            NotFoundError: If explain has not run.
        """
        return read_json(self.manager.stage_dir("explain", create=False) / "global_summary.json")

    def load_bins(self) -> list[dict]:
        """Read the bin summaries of the explain stage in bin order."""
        bins_dir = self.manager.stage_dir("explain", create=False) / "bins"
        paths = sorted(bins_dir.glob("bin_*.json"), key=lambda p: int(p.stem.split("_")[1]))
        if not paths:
            raise NotFoundError(f"Stage output '{bins_dir}' is missing; run explain first.")
        return [read_json(path) for path in paths]
