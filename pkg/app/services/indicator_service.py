# app/services/indicator_service.py

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from app.exception import IndicatorError, InvalidInputError, NotFoundError, PatentValuationError
from app.models import IPC_SECTIONS, IpcLevel, Label, LabelPolicy, PatentRecord
from app.services.corpus_service import CorpusIndex, derive_label, record_ipcs_at_level
from app.services.similarity_service import (
    EmbeddingSource,
    TitleSimilarity,
    build_similarity,
    semantic_similarity,
)
from app.utility import parse_ipc, write_frame

if TYPE_CHECKING:
    from app.valuation_manager import ValuationManager

logger = logging.getLogger(__name__)

US = "US"
LABEL_VALUES = {Label.VP.value: 1, Label.NVP.value: 0}


def _section_names(prefix: str) -> list[str]:
    return [f"{prefix}({s})" for s in IPC_SECTIONS]


def feature_names() -> list[str]:
    """
    Return the 50 indicator names in matrix column order.

    Returns:
        list[str]: SC_1..SC_7, PR_1..PR_2, CP_1..CP_5, DEC_1..DEC_7, TE_1..TE_3,
            TE_4(A..H), TE_5, PK_1..PK_7, PK_8(A..H), PK_9, PK_10.
    """
    names = [f"SC_{i}" for i in range(1, 8)]
    names += ["PR_1", "PR_2"]
    names += [f"CP_{i}" for i in range(1, 6)]
    names += [f"DEC_{i}" for i in range(1, 8)]
    names += ["TE_1", "TE_2", "TE_3", *_section_names("TE_4"), "TE_5"]
    names += [f"PK_{i}" for i in range(1, 8)]
    names += [*_section_names("PK_8"), "PK_9", "PK_10"]
    return names


FEATURE_NAMES = feature_names()
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class FieldConfig:
    """
    Technology-field settings of indicator extraction.

    Attributes:
        focal_field (str): IPC prefix of the focal technology field.
        ipc_level (IpcLevel): Level used for corpus aggregates and breadth.
        embedding_source (EmbeddingSource): Title-similarity backend.
        embedding_path (Path | None): Embedding file for external-file mode.
    """

    focal_field: str = "H01L"
    ipc_level: IpcLevel = IpcLevel.SUBCLASS
    embedding_source: EmbeddingSource = EmbeddingSource.LEXICAL_FALLBACK
    embedding_path: Path | None = None

    def __post_init__(self) -> None:
        # parse_ipc raises InvalidInputError for a non-prefix
        object.__setattr__(self, "focal_field", parse_ipc(self.focal_field).code)


@dataclass(frozen=True)
class IndicatorVector:
    """
    The 50 indicators of one patent, grouped by category.

    Attributes:
        patent_id (str): Patent the indicators belong to.
        sc (tuple): SC_1..SC_7.
        pr (tuple): PR_1..PR_2.
        cp (tuple): CP_1..CP_5.
        dec (tuple): DEC_1..DEC_7.
        te (tuple): TE_1..TE_3, TE_4(A..H), TE_5.
        pk (tuple): PK_1..PK_7, PK_8(A..H), PK_9, PK_10.
    """

    patent_id: str
    sc: tuple[float, ...]
    pr: tuple[float, ...]
    cp: tuple[float, ...]
    dec: tuple[float, ...]
    te: tuple[float, ...]
    pk: tuple[float, ...]

    def values(self) -> list[float]:
        """Return the indicators in feature_names() order."""
        row = [*self.sc, *self.pr, *self.cp, *self.dec, *self.te, *self.pk]
        if len(row) != N_FEATURES:
            raise IndicatorError(f"indicator row has {len(row)} values", self.patent_id)
        return [float(v) for v in row]

    def as_dict(self) -> dict[str, float]:
        """Return a name -> value mapping."""
        return dict(zip(FEATURE_NAMES, self.values()))


@dataclass
class FeatureMatrix:
    """
    Model input matrix: one 50-wide row per labelled patent.

    Attributes:
        patent_ids (list[str]): Row keys, sorted.
        rows (np.ndarray): (n, 50) indicator values.
        labels (np.ndarray): 1 for VP, 0 for NVP.
        feature_names (list[str]): Column names.
    """

    patent_ids: list[str]
    rows: np.ndarray
    labels: np.ndarray
    feature_names: list[str] = field(default_factory=lambda: list(FEATURE_NAMES))

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, len(self.feature_names))
        self.labels = np.asarray(self.labels, dtype=int)
        if len(set(self.feature_names)) != len(self.feature_names):
            raise InvalidInputError("Feature names must be unique.")
        if not (len(self.patent_ids) == self.rows.shape[0] == self.labels.shape[0]):
            raise InvalidInputError("Feature matrix rows, ids and labels are not aligned.")

    def __len__(self) -> int:
        return len(self.patent_ids)

    def to_frame(self) -> pd.DataFrame:
        """Return the matrix as a DataFrame with feature, patent_id and label columns."""
        frame = pd.DataFrame(self.rows, columns=self.feature_names)
        frame["patent_id"] = self.patent_ids
        frame["label"] = [Label.VP.value if v == 1 else Label.NVP.value for v in self.labels]
        return frame

    def to_csv(self, path: str | Path) -> Path:
        """Write the matrix as CSV (50 feature columns, patent_id, label)."""
        return write_frame(path, self.to_frame())

    @classmethod
    def from_csv(cls, path: str | Path) -> "FeatureMatrix":
        """
        Read a matrix written by to_csv.

        Raises:
            NotFoundError: If the file does not exist.
            InvalidInputError: If columns or labels are wrong.
        """
        try:
            frame = pd.read_csv(path, dtype={"patent_id": str, "label": str})
        except FileNotFoundError:
            raise NotFoundError(f"Feature matrix '{path}' does not exist.")
        names = [c for c in frame.columns if c not in ("patent_id", "label")]
        if names != FEATURE_NAMES or "label" not in frame or "patent_id" not in frame:
            raise InvalidInputError(f"Feature matrix '{path}' has unexpected columns.")
        unknown = set(frame["label"]) - set(LABEL_VALUES)
        if unknown:
            raise InvalidInputError(f"Feature matrix '{path}' has unknown labels {sorted(unknown)}.")
        return cls(
            patent_ids=frame["patent_id"].tolist(),
            rows=frame[names].to_numpy(dtype=float),
            labels=frame["label"].map(LABEL_VALUES).to_numpy(dtype=int),
            feature_names=names,
        )


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else 0.0


def _distinct_nonempty(values) -> int:
    return len({v for v in values if v})


def _section_tally(codes) -> tuple[int, ...]:
    tally = Counter(code[0] for code in codes)
    return tuple(tally.get(section, 0) for section in IPC_SECTIONS)


def _carries_prefix(codes, prefix: str) -> bool:
    return any(code.startswith(prefix) for code in codes)


def compute_scope_coverage(record: PatentRecord) -> tuple[float, ...]:
    """
    Compute SC_1..SC_7 (scope and coverage).

    Args:
        record (PatentRecord): The patent.

    Returns:
        tuple: full-text words, distinct cited countries, claims, dependent claims,
            independent claims, mean independent-claim words, distinct IPC codes.
    """
    independent = [c.word_count for c in record.claims if c.is_independent]
    return (
        record.fulltext_word_count,
        _distinct_nonempty(c.cited_country for c in record.backward_citations),
        len(record.claims),
        len(record.claims) - len(independent),
        len(independent),
        _mean(independent),
        len(set(record.ipcs)),
    )


def compute_priority(record: PatentRecord) -> tuple[float, ...]:
    """Compute PR_1 (priority count) and PR_2 (distinct priority countries)."""
    return (
        len(record.priorities),
        _distinct_nonempty(p.country for p in record.priorities),
    )


def compute_completeness(record: PatentRecord) -> tuple[float, ...]:
    """
    Compute CP_1..CP_5 (completeness).

    Returns:
        tuple: citations, US citations, non-US citations, filing-to-grant days,
            abstract words.
    """
    total = len(record.backward_citations)
    us = sum(1 for c in record.backward_citations if c.cited_country == US)
    return (
        total,
        us,
        total - us,
        (record.grant_date - record.filing_date).days,
        record.abstract_word_count,
    )


def compute_dev_effort(record: PatentRecord) -> tuple[float, ...]:
    """
    Compute DEC_1..DEC_7 (development effort and cooperation).

    A party whose country is not "US" (unknown included) counts as non-US;
    distinct-country counts ignore unknown countries.
    """
    assignees, inventors = record.assignees, record.inventors
    overdue = [a.overdue_fee_count for a in assignees if a.overdue_fee_count is not None]
    return (
        len(assignees),
        sum(1 for a in assignees if a.country != US),
        _distinct_nonempty(a.country for a in assignees),
        len(inventors),
        sum(1 for i in inventors if i.country != US),
        _distinct_nonempty(i.country for i in inventors),
        _mean(overdue),
    )


def compute_tech_environment(record: PatentRecord, index: CorpusIndex) -> tuple[float, ...]:
    """
    Compute TE_1..TE_3, TE_4(A..H) and TE_5 (technology environment).

    Args:
        record (PatentRecord): The patent.
        index (CorpusIndex): Corpus aggregates.

    Returns:
        tuple: 13 values in column order.

    Raises:
        IndicatorError: If the patent has no IPC at the index level.
    """
    try:
        ipcs = record_ipcs_at_level(record, index.ipc_level)
    except InvalidInputError as e:
        raise IndicatorError(str(e), record.patent_id)
    if not ipcs:
        raise IndicatorError("no parseable IPC code", record.patent_id)

    year = record.grant_year
    te_1 = _mean([index.patents_in_year(ipc, year) for ipc in ipcs])
    te_2 = _mean([index.cumulative(ipc, year) for ipc in ipcs])
    te_3 = _mean([index.applicants_in_year(ipc, year) for ipc in ipcs])

    # negative gaps (cited filed after the citing patent) count as zero age
    gaps = [
        max(0, (record.filing_date - c.cited_filing_date).days)
        for c in record.backward_citations
        if c.cited_filing_date is not None
    ]
    te_5 = float(np.median(gaps)) if gaps else 0.0
    return (te_1, te_2, te_3, *_section_tally(record.ipcs), te_5)


def technology_breadth(record: PatentRecord, ipc_level: IpcLevel = IpcLevel.SUBCLASS) -> float:
    """
    Compute PK_9, one minus the concentration of cited patents over IPCs.

    Every cited patent with known IPCs spreads a unit weight evenly over its
    distinct IPCs at ipc_level; the breadth is 1 - sum of squared shares.

    Args:
        record (PatentRecord): The patent.
        ipc_level (IpcLevel): Level the cited IPCs are truncated to.

    Returns:
        float: Value in [0, 1); 0 without cited IPCs.
    """
    weights: Counter = Counter()
    n_cited = 0
    for citation in record.backward_citations:
        prefixes = {p for p in (i.at_level(ipc_level) for i in citation.parsed_ipcs()) if p}
        if not prefixes:
            continue
        n_cited += 1
        for prefix in prefixes:
            weights[prefix] += 1.0 / len(prefixes)
    if n_cited == 0:
        return 0.0
    shares = np.array([weights[k] for k in sorted(weights)]) / n_cited
    return float(1.0 - np.sum(shares**2))


def _subclasses(codes) -> set[str]:
    return {p for p in (parse_ipc(code).at_level(IpcLevel.SUBCLASS) for code in codes) if p}


def compute_prior_knowledge(
    record: PatentRecord,
    index: CorpusIndex,
    cfg: FieldConfig,
    similarity: TitleSimilarity,
) -> tuple[float, ...]:
    """
    Compute PK_1..PK_7, PK_8(A..H), PK_9 and PK_10 (prior knowledge).

    Args:
        record (PatentRecord): The patent.
        index (CorpusIndex): Corpus aggregates.
        cfg (FieldConfig): Focal field and IPC level.
        similarity (TitleSimilarity): Title-similarity backend for PK_6.

    Returns:
        tuple: 19 values in column order.
    """
    citations = record.backward_citations
    assignees = list(dict.fromkeys(a.name for a in record.assignees))
    inventors = list(dict.fromkeys(i.name for i in record.inventors))

    prior = [index.prior_assignee_patents(name, record.grant_date) for name in assignees]
    core = [sum(1 for _, ipcs in entries if _carries_prefix(ipcs, cfg.focal_field)) for entries in prior]
    pk_2 = _mean([len(entries) for entries in prior])
    pk_3 = _mean([index.prior_inventor_count(name, record.grant_date) for name in inventors])
    pk_4 = _mean(core)
    pk_5 = _mean([len(entries) - n_core for entries, n_core in zip(prior, core)])

    pk_6 = _mean(
        [
            semantic_similarity(record.title, c.cited_title, similarity, record.patent_id, c.cited_id)
            for c in citations
            if c.cited_title
        ]
    )

    own = _subclasses(record.ipcs)
    cited = set().union(*(_subclasses(c.cited_ipcs) for c in citations)) if citations else set()
    pk_7 = len(own & cited) / len(own) if own else 0.0

    pk_8 = _section_tally(code for c in citations for code in c.cited_ipcs)
    pk_10 = sum(1 for c in citations if _carries_prefix(c.cited_ipcs, cfg.focal_field))

    return (
        record.npl_citation_count,
        pk_2,
        pk_3,
        pk_4,
        pk_5,
        max(-1.0, min(1.0, pk_6)),
        pk_7,
        *pk_8,
        technology_breadth(record, cfg.ipc_level),
        pk_10,
    )


def compute_indicators(
    record: PatentRecord,
    index: CorpusIndex,
    cfg: FieldConfig,
    similarity: TitleSimilarity,
) -> IndicatorVector:
    """
    Compute the full indicator vector of one patent.

    Raises:
        IndicatorError: Any failure, tagged with the patent_id.
    """
    try:
        return IndicatorVector(
            patent_id=record.patent_id,
            sc=compute_scope_coverage(record),
            pr=compute_priority(record),
            cp=compute_completeness(record),
            dec=compute_dev_effort(record),
            te=compute_tech_environment(record, index),
            pk=compute_prior_knowledge(record, index, cfg, similarity),
        )
    except IndicatorError:
        raise
    except PatentValuationError as e:
        raise IndicatorError(str(e), record.patent_id)


def compute_all(
    records: list[PatentRecord],
    index: CorpusIndex,
    cfg: FieldConfig,
    policy: LabelPolicy | None = None,
    similarity: TitleSimilarity | None = None,
) -> FeatureMatrix:
    """
    Compute the feature matrix of every VP/NVP patent of a corpus.

    Args:
        records (list[PatentRecord]): The corpus.
        index (CorpusIndex): Aggregates built over the same corpus.
        cfg (FieldConfig): Indicator settings.
        policy (LabelPolicy | None): Label policy (default 4 vs max).
        similarity (TitleSimilarity | None): Backend; built from cfg if omitted.

    Returns:
        FeatureMatrix: Rows sorted by patent_id; EXCLUDED patents dropped.
    """
    policy = policy or LabelPolicy()
    if similarity is None:
        similarity = build_similarity(cfg.embedding_source, records, cfg.embedding_path)

    labelled = []
    for record in records:
        label = derive_label(record, policy)
        if label != Label.EXCLUDED:
            labelled.append((record, label))
    labelled.sort(key=lambda pair: pair[0].patent_id)

    if not labelled:
        logger.warning("No VP/NVP patents in the corpus; the feature matrix is empty")
        return FeatureMatrix(patent_ids=[], rows=np.empty((0, N_FEATURES)), labels=[])

    rows = [compute_indicators(r, index, cfg, similarity).values() for r, _ in labelled]
    logger.info("Computed %d indicators for %d patents", N_FEATURES, len(rows))
    return FeatureMatrix(
        patent_ids=[r.patent_id for r, _ in labelled],
        rows=np.array(rows, dtype=float),
        labels=[1 if label == Label.VP else 0 for _, label in labelled],
    )


class IndicatorService:
    """
    Service class responsible for turning the parsed corpus into the feature matrix.
    """

    def __init__(self, manager: ValuationManager) -> None:
        """
        Initialize IndicatorService with a ValuationManager instance.

        Args:
            manager (ValuationManager): The parent manager holding the run configuration.
        """
        self.manager = manager
        self.config = manager.config

    def build_matrix(self, records: list[PatentRecord], index: CorpusIndex) -> FeatureMatrix:
        """
        Compute the feature matrix under the configured field settings and label policy.

        Returns:
            FeatureMatrix: The labelled matrix (possibly empty, with a run warning).
        """
        matrix = compute_all(records, index, self.config.indicators, self.config.labels)
        if len(matrix) == 0:
            self.manager.warn("all patents are EXCLUDED; the feature matrix is empty")
        return matrix

    def matrix_path(self, create: bool = True) -> Path:
        """Return the location of the extract stage's feature matrix."""
        return self.manager.stage_dir("extract", create=create) / "feature_matrix.csv"

    def emit(self, matrix: FeatureMatrix) -> Path:
        """Write the feature matrix CSV."""
        return matrix.to_csv(self.matrix_path())

    def load(self) -> FeatureMatrix:
        """
        Read the feature matrix written by the extract stage.

        Raises:
            NotFoundError: If extract has not run.
        """
        return FeatureMatrix.from_csv(self.matrix_path(create=False))
