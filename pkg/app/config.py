# app/config.py

from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import toml
from jsonschema import Draft7Validator

from app.exception import ConfigError, PatentValuationError
from app.learners import ModelSpec
from app.models import LabelPolicy, validate_lifetime
from app.services.attribution_service import DEFAULT_BIN_EDGES, AttributionConfig
from app.services.corpus_service import CorpusFormat, validate_corpus_format
from app.services.evaluation_service import DEFAULT_ECE_BINS
from app.services.indicator_service import FieldConfig
from app.services.screening_service import DEFAULT_F1_FLOOR, SelectionPolicy, validate_policy
from app.services.similarity_service import EmbeddingSource
from app.utility import canonical_json, derive_seed, validate_ipc_level

logger = logging.getLogger(__name__)

DEFAULT_K = 5
GRID_DEFAULT = "default"
GRID_EXPLICIT = "explicit"

_LIFETIME = {"oneOf": [{"type": "integer", "minimum": 0}, {"type": "string"}]}
_POSITIVE_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["seed", "corpus"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "corpus": {
            "type": "object",
            "additionalProperties": False,
            "required": ["path"],
            "properties": {
                "path": {"type": "string", "minLength": 1},
                "format": {"type": "string", "enum": [f.value for f in CorpusFormat]},
                "strict": {"type": "boolean"},
            },
        },
        "labels": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "nvp_lifetimes": {"type": "array", "items": _LIFETIME},
                "vp_lifetimes": {"type": "array", "items": _LIFETIME},
            },
        },
        "indicators": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "focal_field": {"type": "string", "minLength": 1},
                "ipc_level": {"type": "string", "enum": ["section", "class", "subclass"]},
                "embedding_source": {"type": "string", "enum": [s.value for s in EmbeddingSource]},
                "embedding_path": {"type": "string", "minLength": 1},
            },
        },
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k": {"type": "integer", "minimum": 2},
                "resample": {"type": "boolean"},
                "grid": {"type": "string", "enum": [GRID_DEFAULT, GRID_EXPLICIT]},
                "ece_bins": _POSITIVE_INT,
                "models": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["family"],
                        "properties": {
                            "family": {"type": "string"},
                            "name": {"type": "string", "minLength": 1},
                            "hyperparameters": {"type": "object"},
                        },
                    },
                },
            },
        },
        "screening": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "f1_floor": {"type": "number", "minimum": 0, "maximum": 1},
                "selection_policy": {"type": "string", "enum": [p.value for p in SelectionPolicy]},
            },
        },
        "attribution": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"type": "string", "enum": ["exact", "sampled"]},
                "max_features": _POSITIVE_INT,
                "n_permutations": _POSITIVE_INT,
                "background_size": _POSITIVE_INT,
                "max_instances": _POSITIVE_INT,
                "bin_edges": {"type": "array", "minItems": 2, "items": {"type": "number"}},
            },
        },
        "report": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"record_timing": {"type": "boolean"}},
        },
    },
}


@dataclass(frozen=True)
class CorpusConfig:
    path: Path
    format: CorpusFormat = CorpusFormat.JSONL
    strict: bool = False


@dataclass(frozen=True)
class TrainingConfig:
    """
    Cross-validation and grid settings.

    Attributes:
        k (int): Number of folds.
        resample (bool): Tomek undersampling of training splits.
        models (tuple[ModelSpec, ...] | None): Explicit grid, None for the default grid.
        ece_bins (int): Reliability bin count.
    """

    k: int = DEFAULT_K
    resample: bool = True
    models: tuple[ModelSpec, ...] | None = None
    ece_bins: int = DEFAULT_ECE_BINS


@dataclass(frozen=True)
class ScreeningConfig:
    f1_floor: float = DEFAULT_F1_FLOOR
    selection_policy: SelectionPolicy = SelectionPolicy.KNEE


@dataclass(frozen=True)
class ReportConfig:
    record_timing: bool = False


@dataclass(frozen=True)
class RunConfig:
    """
    Fully resolved configuration of a pipeline run.

    Attributes:
        seed (int): Root of every random stream.
        corpus (CorpusConfig): Corpus location, format and strictness.
        labels (LabelPolicy): Lifetime-to-label mapping.
        indicators (FieldConfig): Technology-field settings.
        training (TrainingConfig): Cross-validation and grid.
        screening (ScreeningConfig): F1 floor and selection policy.
        attribution (AttributionConfig): Explain-stage settings.
        report (ReportConfig): Report-stage settings.
        output_dir (Path | None): Output directory.
    """

    seed: int
    corpus: CorpusConfig
    labels: LabelPolicy = field(default_factory=LabelPolicy)
    indicators: FieldConfig = field(default_factory=FieldConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    screening: ScreeningConfig = field(default_factory=ScreeningConfig)
    attribution: AttributionConfig = field(default_factory=AttributionConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    output_dir: Path | None = None

    def to_dict(self) -> dict:
        """
        Return the resolved configuration as stored in run_config.json.

        The output directory is left out so that runs into different
        directories share one config hash.
        """
        return {
            "seed": self.seed,
            "corpus": {
                "path": str(self.corpus.path),
                "format": self.corpus.format.value,
                "strict": self.corpus.strict,
            },
            "labels": {
                "nvp_lifetimes": _sorted_lifetimes(self.labels.nvp_lifetimes),
                "vp_lifetimes": _sorted_lifetimes(self.labels.vp_lifetimes),
            },
            "indicators": {
                "focal_field": self.indicators.focal_field,
                "ipc_level": self.indicators.ipc_level.value,
                "embedding_source": self.indicators.embedding_source.value,
                "embedding_path": (
                    str(self.indicators.embedding_path) if self.indicators.embedding_path else None
                ),
            },
            "training": {
                "k": self.training.k,
                "resample": self.training.resample,
                "grid": GRID_DEFAULT if self.training.models is None else GRID_EXPLICIT,
                "models": (
                    None
                    if self.training.models is None
                    else [spec.to_dict() for spec in self.training.models]
                ),
                "ece_bins": self.training.ece_bins,
            },
            "screening": {
                "f1_floor": self.screening.f1_floor,
                "selection_policy": self.screening.selection_policy.value,
            },
            "attribution": {
                "mode": self.attribution.mode.value,
                "max_features": self.attribution.max_features,
                "n_permutations": self.attribution.n_permutations,
                "background_size": self.attribution.background_size,
                "max_instances": self.attribution.max_instances,
                "bin_edges": list(self.attribution.bin_edges),
            },
            "report": {"record_timing": self.report.record_timing},
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical run_config.json text."""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def _sorted_lifetimes(lifetimes) -> list:
    return sorted(lifetimes, key=lambda v: (isinstance(v, str), str(v) if isinstance(v, str) else v))


def _schema_error(document: dict) -> str | None:
    errors = sorted(Draft7Validator(CONFIG_SCHEMA).iter_errors(document), key=lambda e: list(e.path))
    if not errors:
        return None
    first = errors[0]
    location = ".".join(str(p) for p in first.path) or "config"
    return f"{location}: {first.message}"


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path).resolve()


def _build_grid(entries: list[dict], seed: int) -> tuple[ModelSpec, ...]:
    per_family: Counter = Counter()
    specs = []
    for entry in entries:
        family = str(entry["family"]).strip().upper()
        per_family[family] += 1
        name = entry.get("name") or f"{family} #{per_family[family]}"
        specs.append(
            ModelSpec.create(
                family,
                entry.get("hyperparameters") or {},
                seed=derive_seed(seed, "grid", name),
                name=name,
            )
        )
    duplicates = sorted(n for n, c in Counter(s.name for s in specs).items() if c > 1)
    if duplicates:
        raise ConfigError(f"training.models: duplicate model name '{duplicates[0]}'.")
    return tuple(specs)


def build_config(
    document: dict,
    base_dir: str | Path = ".",
    seed: int | None = None,
    out: str | Path | None = None,
    strict: bool | None = None,
) -> RunConfig:
    """
    Validate a parsed configuration document and build the RunConfig.

    Args:
        document (dict): Parsed TOML.
        base_dir (str | Path): Directory relative paths resolve against.
        seed (int | None): Override of the configured seed.
        out (str | Path | None): Override of output_dir.
        strict (bool | None): True forces strict corpus parsing.

    Returns:
        RunConfig: The resolved configuration.

    Raises:
        ConfigError: On unknown keys, wrong types, bad values or missing files.
    """
    message = _schema_error(document)
    if message:
        raise ConfigError(message)

    base = Path(base_dir)
    try:
        run_seed = int(seed) if seed is not None else int(document["seed"])
        if run_seed < 0:
            raise ConfigError("seed cannot be negative.")

        corpus_doc = document["corpus"]
        corpus = CorpusConfig(
            path=_resolve(base, corpus_doc["path"]),
            format=validate_corpus_format(corpus_doc.get("format", CorpusFormat.JSONL.value)),
            strict=bool(strict) or corpus_doc.get("strict", False),
        )
        if not corpus.path.exists():
            raise ConfigError(f"corpus.path: '{corpus.path}' does not exist.")

        labels_doc = document.get("labels", {})
        labels = LabelPolicy(
            nvp_lifetimes=frozenset(
                validate_lifetime(v) for v in labels_doc.get("nvp_lifetimes", [4])
            ),
            vp_lifetimes=frozenset(
                validate_lifetime(v) for v in labels_doc.get("vp_lifetimes", ["max"])
            ),
        )

        ind_doc = document.get("indicators", {})
        embedding_path = ind_doc.get("embedding_path")
        indicators = FieldConfig(
            focal_field=ind_doc.get("focal_field", FieldConfig.focal_field),
            ipc_level=validate_ipc_level(ind_doc.get("ipc_level", "subclass")),
            embedding_source=EmbeddingSource(
                ind_doc.get("embedding_source", EmbeddingSource.LEXICAL_FALLBACK.value)
            ),
            embedding_path=_resolve(base, embedding_path) if embedding_path else None,
        )
        if indicators.embedding_source == EmbeddingSource.EXTERNAL_FILE:
            if indicators.embedding_path is None:
                raise ConfigError("indicators.embedding_path is required for external-file embeddings.")
            if not indicators.embedding_path.exists():
                raise ConfigError(f"indicators.embedding_path: '{indicators.embedding_path}' does not exist.")

        train_doc = document.get("training", {})
        grid = train_doc.get("grid", GRID_EXPLICIT if "models" in train_doc else GRID_DEFAULT)
        if grid == GRID_DEFAULT and "models" in train_doc:
            raise ConfigError('training.models cannot be combined with grid = "default".')
        if grid == GRID_EXPLICIT and "models" not in train_doc:
            raise ConfigError('training.grid = "explicit" needs [[training.models]] entries.')
        training = TrainingConfig(
            k=train_doc.get("k", DEFAULT_K),
            resample=train_doc.get("resample", True),
            models=_build_grid(train_doc["models"], run_seed) if grid == GRID_EXPLICIT else None,
            ece_bins=train_doc.get("ece_bins", DEFAULT_ECE_BINS),
        )

        screen_doc = document.get("screening", {})
        screening = ScreeningConfig(
            f1_floor=float(screen_doc.get("f1_floor", DEFAULT_F1_FLOOR)),
            selection_policy=validate_policy(
                screen_doc.get("selection_policy", SelectionPolicy.KNEE.value)
            ),
        )

        attr_doc = document.get("attribution", {})
        attribution = AttributionConfig(
            mode=attr_doc.get("mode", "sampled"),
            max_features=attr_doc.get("max_features", AttributionConfig.max_features),
            n_permutations=attr_doc.get("n_permutations", AttributionConfig.n_permutations),
            background_size=attr_doc.get("background_size", AttributionConfig.background_size),
            max_instances=attr_doc.get("max_instances", AttributionConfig.max_instances),
            bin_edges=tuple(attr_doc.get("bin_edges", DEFAULT_BIN_EDGES)),
        )

        report = ReportConfig(
            record_timing=document.get("report", {}).get("record_timing", False)
        )
    except ConfigError:
        raise
    except PatentValuationError as e:
        raise ConfigError(str(e))

    output_dir = out if out is not None else document.get("output_dir")
    return RunConfig(
        seed=run_seed,
        corpus=corpus,
        labels=labels,
        indicators=indicators,
        training=training,
        screening=screening,
        attribution=attribution,
        report=report,
        output_dir=(
            None
            if output_dir is None
            else Path(output_dir) if out is not None else _resolve(base, output_dir)
        ),
    )


def load_config(
    path: str | Path,
    seed: int | None = None,
    out: str | Path | None = None,
    strict: bool | None = None,
) -> RunConfig:
    """
    Load a TOML run configuration.

    Args:
        path (str | Path): The configuration file.
        seed (int | None): Command-line seed override.
        out (str | Path | None): Command-line output directory override.
        strict (bool | None): Command-line strict flag.

    Returns:
        RunConfig: The resolved configuration.

    Raises:
        ConfigError: If the file is missing, unparsable or invalid.
    """
    path = Path(path)
    try:
        document = toml.load(path)
    except FileNotFoundError:
        raise ConfigError(f"Config file '{path}' does not exist.")
    except toml.TomlDecodeError as e:
        raise ConfigError(f"Config file '{path}' is not valid TOML: {e}")
    config = build_config(document, path.resolve().parent, seed=seed, out=out, strict=strict)
    logger.info("Loaded config %s (seed %d)", path, config.seed)
    return config

